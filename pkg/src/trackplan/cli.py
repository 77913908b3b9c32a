"""Command line entry points for the batch experiment harness.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import bench
from .sim import run_episode


def _parse_int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _parse_float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackplan",
        description="Multi-target tracking simulation studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimator-study", help="validate the coverage estimator")
    est.add_argument("--cases", type=int, default=100)
    est.add_argument("--runs", type=int, default=2000)
    est.add_argument("--t-d", type=_parse_float_list, default=[0.0, 100.0, 200.0],
                     help="comma-separated departure delays in seconds")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--workers", type=int, default=1)
    est.add_argument("--out", type=Path, required=True, help="output base path")
    est.add_argument("--paper-scale", action="store_true",
                     help="use 1000 cases x 10000 runs")

    trk = sub.add_parser("tracking-study", help="compare planners on random missions")
    trk.add_argument("--targets", type=_parse_int_list, default=[2, 3],
                     help="comma-separated target counts")
    trk.add_argument("--cases", type=int, default=50)
    trk.add_argument("--planner", type=str, default="mcts,greedy,random",
                     help="comma-separated planner ids")
    trk.add_argument("--seed", type=int, default=0)
    trk.add_argument("--iterations", type=int, default=bench.DEFAULT_EPISODE_ITERATIONS)
    trk.add_argument("--budget", type=float, default=bench.MISSION_BUDGET)
    trk.add_argument("--workers", type=int, default=1)
    trk.add_argument("--out", type=Path, required=True)
    trk.add_argument("--paper-scale", action="store_true",
                     help="use 100 cases and target counts 2..6")

    epi = sub.add_parser("single-episode", help="run one mission from a config file")
    epi.add_argument("--config", type=Path, required=True)
    epi.add_argument("--seed", type=int, default=0)
    epi.add_argument("--out", type=Path, default=None,
                     help="optional JSON path for the episode summary")
    return parser


def _cmd_estimator(args) -> int:
    cases, runs = args.cases, args.runs
    if args.paper_scale:
        cases, runs = 1000, 10_000
    started = time.perf_counter()
    report = bench.run_estimator_study(
        cases=cases,
        runs_per_case=runs,
        t_d_list=args.t_d,
        seed=args.seed,
        workers=args.workers,
    )
    csv_path, json_path = bench.emit_report(report, args.out)
    elapsed = time.perf_counter() - started
    print(f"wrote {csv_path} and {json_path} ({elapsed:.1f}s wall clock)")
    for t_d, agg in report.aggregates["by_t_d"].items():
        print(
            f"t_d={t_d}: MAPE(P_find)={agg['mape_pfind']:.4f} "
            f"MAPE(E[T_find])={agg['mape_tfind']:.4f}"
        )
    return 0


def _cmd_tracking(args) -> int:
    targets, cases = args.targets, args.cases
    if args.paper_scale:
        targets, cases = [2, 3, 4, 5, 6], 100
    planners = [p for p in args.planner.split(",") if p]
    started = time.perf_counter()
    report = bench.run_tracking_study(
        n_list=targets,
        cases_per_n=cases,
        planners=planners,
        seed=args.seed,
        budget=args.budget,
        iterations=args.iterations,
        workers=args.workers,
    )
    csv_path, json_path = bench.emit_report(report, args.out)
    elapsed = time.perf_counter() - started
    print(f"wrote {csv_path} and {json_path} ({elapsed:.1f}s wall clock)")
    for planner, per_n in report.aggregates["by_planner"].items():
        for n, agg in per_n.items():
            mean = agg["mean_U"]
            std = agg["std_U"]
            if mean is not None:
                print(f"{planner} n={n}: U = {mean:.2f} +/- {std:.2f} ({agg['cases']} cases)")
    return 0


def _cmd_episode(args) -> int:
    config = bench.load_scenario(args.config)
    result = run_episode(config, args.seed)
    if result.failure is not None:
        print(f"episode failed: {result.failure}", file=sys.stderr)
        return 2
    summary = {
        "final_U": bench._sig6(result.final_U),
        "detections": [[t, tid] for t, tid in result.detections],
        "seed": result.seed,
        "steps": len(result.agent_track) - 1,
    }
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimator-study":
            return _cmd_estimator(args)
        if args.command == "tracking-study":
            return _cmd_tracking(args)
        if args.command == "single-episode":
            return _cmd_episode(args)
        parser.error(f"unknown command {args.command}")
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
