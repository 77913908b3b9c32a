"""Batch experiment harness: randomized scenarios, the coverage-estimator
validation study, the multi-target tracking study with baseline planners,
and deterministic CSV/JSON reporting.

Randomness discipline: one master seed expands to per-case sub-seeds through
SeedSequence spawn keys, so adding cases never reshuffles earlier ones and
results are independent of the worker count.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .beliefs import MotionModel, ObservationModel, TargetBelief, logdet_xy_raw, propagate_raw, update_raw
from .estimator import estimate_coverage
from .sim import Snapshot, run_episode
from .spiral import build_coverage_plan

# Experiment constants shared by all studies.
AGENT_SPEED = 30.0
SENSOR_WIDTH = 100.0
TIME_STEP = 0.5
MISSION_BUDGET = 900.0
POSITION_RANGE = (-1000.0, 1000.0)
VELOCITY_RANGE = (-3.0, 3.0)
POSITION_VAR_RANGE = (500.0, 2000.0)
VELOCITY_VAR_RANGE = (0.25, 0.5)
CORRELATION_RANGE = (-0.8, 0.8)
PROCESS_NOISE_RANGE = (1e-4, 5e-4)

DEFAULT_EPISODE_ITERATIONS = 2000

CSV_HEADER = [
    "study", "n_targets", "case_id", "seed", "planner", "t_d", "final_U",
    "empirical_pfind", "estimated_pfind", "empirical_tfind", "estimated_tfind",
    "runtime_s",
]

# Spawn-key prefixes keeping the studies' seed streams disjoint.
_ESTIMATOR_STREAM = 0
_TRACKING_STREAM = 1


@dataclass(frozen=True)
class PlannerParams:
    iterations: int = DEFAULT_EPISODE_ITERATIONS
    c: float = math.sqrt(2.0)
    seed: Optional[int] = None


@dataclass(frozen=True)
class TargetSpec:
    mean: np.ndarray
    cov: np.ndarray
    q: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(4))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float).reshape(4, 4))


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one randomized world plus planner settings."""

    n_targets: int
    targets: tuple[TargetSpec, ...]
    agent_start: tuple[float, float] = (0.0, 0.0)
    v_a: float = AGENT_SPEED
    w: float = SENSOR_WIDTH
    tau: float = TIME_STEP
    budget: float = MISSION_BUDGET
    planner: str = "mcts"
    planner_params: PlannerParams = field(default_factory=PlannerParams)
    t_d: float = 0.0
    r_obs: tuple = ((1.0, 0.0), (0.0, 1.0))

    def __post_init__(self) -> None:
        if self.n_targets != len(self.targets):
            raise ValueError("n_targets must match the number of target specs")
        if self.planner not in ("mcts", "greedy", "random"):
            raise ValueError(f"unknown planner {self.planner!r}")


def sample_scenario(
    n_targets: int,
    rng: np.random.Generator,
    planner: str = "mcts",
    planner_params: Optional[PlannerParams] = None,
) -> ScenarioConfig:
    """Draw a random scenario: uniform positions, velocities, covariance
    parameters, and process-noise intensities within the study ranges."""
    if n_targets < 1:
        raise ValueError(f"n_targets must be >= 1, got {n_targets}")
    targets = []
    for _ in range(n_targets):
        x = rng.uniform(*POSITION_RANGE)
        y = rng.uniform(*POSITION_RANGE)
        vx = rng.uniform(*VELOCITY_RANGE)
        vy = rng.uniform(*VELOCITY_RANGE)
        var_x = rng.uniform(*POSITION_VAR_RANGE)
        var_y = rng.uniform(*POSITION_VAR_RANGE)
        var_vx = rng.uniform(*VELOCITY_VAR_RANGE)
        var_vy = rng.uniform(*VELOCITY_VAR_RANGE)
        rho = rng.uniform(*CORRELATION_RANGE)
        q = rng.uniform(*PROCESS_NOISE_RANGE)
        cov = np.zeros((4, 4))
        cov[0, 0] = var_x
        cov[1, 1] = var_y
        cov[0, 1] = cov[1, 0] = rho * math.sqrt(var_x * var_y)
        cov[2, 2] = var_vx
        cov[3, 3] = var_vy
        targets.append(TargetSpec(mean=np.array([x, y, vx, vy]), cov=cov, q=q))
    return ScenarioConfig(
        n_targets=n_targets,
        targets=tuple(targets),
        planner=planner,
        planner_params=planner_params or PlannerParams(),
    )


# -- baseline planners ------------------------------------------------------


def greedy_baseline(snapshot: Snapshot) -> int:
    """Myopic choice: maximize p_max times the expected log-det reduction of
    the pursued target.  Targets with zero find probability are never chosen
    while an alternative exists; ties go to the lowest id."""
    budget_steps = int(round(snapshot.remaining_budget / snapshot.models[0].tau))
    best, best_score = None, -math.inf
    for tid in snapshot.available:
        belief = snapshot.beliefs[tid]
        model = snapshot.models[tid]
        est = estimate_coverage(
            belief, snapshot.agent_pos, snapshot.v_a, snapshot.w, model, budget_steps
        )
        if est.p_max <= 0.0:
            continue
        current = logdet_xy_raw(belief.cov)
        steps = int(round((est.intercept_time + est.expected_find_time) / model.tau))
        mean, cov = belief.mean, belief.cov
        if steps > 0:
            mean, cov = propagate_raw(mean, cov, model, steps)
        _, post = update_raw(mean, cov, mean[:2], snapshot.obs)
        score = est.p_max * (current - logdet_xy_raw(post))
        if score > best_score:
            best, best_score = tid, score
    if best is None:
        best = min(snapshot.available)
    return best


class GreedyChooser:
    def first_target(self, snapshot: Snapshot) -> Optional[int]:
        if not snapshot.available:
            return None
        return greedy_baseline(snapshot)

    def conditional(self, snapshot: Snapshot, pursued: int):
        return None


class RandomChooser:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def first_target(self, snapshot: Snapshot) -> Optional[int]:
        if not snapshot.available:
            return None
        return snapshot.available[int(self.rng.integers(len(snapshot.available)))]

    def conditional(self, snapshot: Snapshot, pursued: int):
        return None


# -- reporting ---------------------------------------------------------------


@dataclass(frozen=True)
class StudyReport:
    """Per-case records plus aggregates recomputable from them."""

    study: str
    master_seed: int
    records: tuple[dict, ...]
    aggregates: dict
    config: dict


def _sig6(x: float) -> float:
    return float(f"{x:.6g}")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.6g}"
    return str(value)


def _round_floats(obj):
    if isinstance(obj, float):
        return _sig6(obj)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def mape(estimates: Sequence[float], empiricals: Sequence[float]):
    """Mean absolute percentage error, skipping near-zero empirical values.

    Returns (mape, n_used, n_excluded); mape is None when nothing is usable.
    """
    errors = []
    excluded = 0
    for est, emp in zip(estimates, empiricals):
        if emp is None or est is None or not math.isfinite(emp) or abs(emp) < 1e-6:
            excluded += 1
            continue
        errors.append(abs(est - emp) / abs(emp))
    if not errors:
        return None, 0, excluded
    return sum(errors) / len(errors), len(errors), excluded


def emit_report(report: StudyReport, path) -> tuple[Path, Path]:
    """Write the per-case CSV and the aggregate JSON next to `path`.

    `path` is a base path; `.csv` and `.json` are appended.  All floats are
    rendered with 6 significant digits and the output is byte-deterministic.
    """
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = base.with_suffix(".csv")
    json_path = base.with_suffix(".json")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for record in report.records:
            writer.writerow([_fmt(record.get(col)) for col in CSV_HEADER])
    doc = {
        "study": report.study,
        "master_seed": report.master_seed,
        "config": _round_floats(report.config),
        "aggregates": _round_floats(report.aggregates),
        "counts": {"records": len(report.records)},
    }
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


# -- estimator validation study ----------------------------------------------


def _case_seed(master_seed: int, spawn_key: tuple) -> int:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=spawn_key)
    return int(np.random.default_rng(ss).integers(0, 2**63 - 1))


def _estimator_case(args) -> list[dict]:
    master_seed, case_idx, runs, t_d_list, max_steps = args
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(_ESTIMATOR_STREAM, case_idx))
    )
    config = sample_scenario(1, rng)
    spec = config.targets[0]
    model = MotionModel(config.tau, spec.q)
    agent = np.asarray(config.agent_start, dtype=float)
    chol0 = np.linalg.cholesky(spec.cov)
    chol_q = np.linalg.cholesky(model.Q)
    records = []
    for j, t_d in enumerate(t_d_list):
        wait_steps = int(round(t_d / config.tau))
        belief = TargetBelief(spec.mean, spec.cov, 0.0)
        mean_dep, cov_dep = spec.mean, spec.cov
        if wait_steps > 0:
            mean_dep, cov_dep = propagate_raw(mean_dep, cov_dep, model, wait_steps)
            belief = TargetBelief(mean_dep, cov_dep, t_d)
        est = estimate_coverage(belief, agent, config.v_a, config.w, model, max_steps)
        plan = build_coverage_plan(
            agent, config.v_a, config.w, belief, model, int(round(est.t_cutoff / config.tau))
        )
        run_rng = np.random.default_rng(
            np.random.SeedSequence(
                entropy=master_seed, spawn_key=(_ESTIMATOR_STREAM, case_idx, 1 + j)
            )
        )
        # Monte Carlo truth trajectories, vectorized across runs.  The target
        # moves during the departure delay while the agent stays put; finds
        # are counted from departure (intercept leg included).
        states = spec.mean + run_rng.standard_normal((runs, 4)) @ chol0.T
        F_T = model.F.T
        for _ in range(wait_steps):
            states = states @ F_T + run_rng.standard_normal((runs, 4)) @ chol_q.T
        found = np.zeros(runs, dtype=bool)
        find_time = np.zeros(runs)
        radius2 = (config.w / 2.0) ** 2
        for step, wp in enumerate(plan.waypoints):
            states = states @ F_T + run_rng.standard_normal((runs, 4)) @ chol_q.T
            dx = states[:, 0] - wp[0]
            dy = states[:, 1] - wp[1]
            newly = (dx * dx + dy * dy <= radius2) & ~found
            if newly.any():
                find_time[newly] = (step + 1) * config.tau
                found[newly] = True
        emp_p = float(found.mean())
        emp_t = float(find_time[found].mean()) if found.any() else None
        records.append(
            {
                "study": "estimator",
                "n_targets": 1,
                "case_id": case_idx,
                "seed": _case_seed(master_seed, (_ESTIMATOR_STREAM, case_idx)),
                "planner": None,
                "t_d": t_d,
                "final_U": None,
                "empirical_pfind": emp_p,
                "estimated_pfind": est.p_max,
                "empirical_tfind": emp_t,
                "estimated_tfind": est.intercept_time + est.expected_find_time
                if est.p_max > 0.0
                else None,
                "runtime_s": t_d + len(plan) * config.tau,
            }
        )
    return records


def _run_parallel(task, args_list, workers: int) -> list:
    if workers <= 1:
        return [task(args) for args in args_list]
    ctx = multiprocessing.get_context("spawn")
    with ctx.Pool(processes=workers) as pool:
        return pool.map(task, args_list)


def run_estimator_study(
    cases: int,
    runs_per_case: int,
    t_d_list: Sequence[float] = (0.0, 100.0, 200.0),
    seed: int = 0,
    workers: int = 1,
    max_steps: int = 20_000,
) -> StudyReport:
    """Compare estimated coverage outcomes with Monte Carlo statistics.

    For each random single-target case and departure delay, the fixed
    intercept-plus-spiral plan is flown against `runs_per_case` sampled
    target trajectories, and the mean absolute percentage errors of the find
    probability and the conditional find time are aggregated per delay.
    """
    if cases < 1 or runs_per_case < 1:
        raise ValueError("cases and runs_per_case must be >= 1")
    args_list = [
        (seed, idx, runs_per_case, tuple(t_d_list), max_steps) for idx in range(cases)
    ]
    records = []
    for case_records in _run_parallel(_estimator_case, args_list, workers):
        records.extend(case_records)
    records = [
        {k: (_sig6(v) if isinstance(v, float) else v) for k, v in rec.items()}
        for rec in records
    ]
    by_t_d = {}
    for t_d in t_d_list:
        rows = [r for r in records if r["t_d"] == t_d]
        p_mape, p_used, p_excl = mape(
            [r["estimated_pfind"] for r in rows], [r["empirical_pfind"] for r in rows]
        )
        t_rows = [r for r in rows if r["estimated_tfind"] is not None]
        t_mape, t_used, t_excl = mape(
            [r["estimated_tfind"] for r in t_rows], [r["empirical_tfind"] for r in t_rows]
        )
        by_t_d[f"{t_d:g}"] = {
            "mape_pfind": p_mape,
            "pfind_cases_used": p_used,
            "pfind_cases_excluded": p_excl,
            "mape_tfind": t_mape,
            "tfind_cases_used": t_used,
            "tfind_cases_excluded": t_excl + (len(rows) - len(t_rows)),
        }
    config = {
        "cases": cases,
        "runs_per_case": runs_per_case,
        "t_d_list": list(t_d_list),
        "max_steps": max_steps,
        "agent_speed": AGENT_SPEED,
        "sensor_width": SENSOR_WIDTH,
        "tau": TIME_STEP,
    }
    return StudyReport(
        study="estimator",
        master_seed=seed,
        records=tuple(records),
        aggregates={"by_t_d": by_t_d},
        config=config,
    )


# -- tracking study -----------------------------------------------------------


def _tracking_case(args) -> list[dict]:
    master_seed, n, case_idx, planners, budget, iterations, c = args
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(_TRACKING_STREAM, n, case_idx))
    )
    base = sample_scenario(n, rng)
    case_seed = _case_seed(master_seed, (_TRACKING_STREAM, n, case_idx, 1))
    records = []
    for planner in planners:
        config = ScenarioConfig(
            n_targets=base.n_targets,
            targets=base.targets,
            agent_start=base.agent_start,
            v_a=base.v_a,
            w=base.w,
            tau=base.tau,
            budget=budget,
            planner=planner,
            planner_params=PlannerParams(iterations=iterations, c=c),
        )
        result = run_episode(config, case_seed)
        records.append(
            {
                "study": "tracking",
                "n_targets": n,
                "case_id": case_idx,
                "seed": case_seed,
                "planner": planner,
                "t_d": None,
                "final_U": None if result.failure else result.final_U,
                "empirical_pfind": None,
                "estimated_pfind": None,
                "empirical_tfind": None,
                "estimated_tfind": None,
                "runtime_s": budget,
            }
        )
    return records


def run_tracking_study(
    n_list: Sequence[int],
    cases_per_n: int,
    planners: Sequence[str] = ("mcts", "greedy", "random"),
    seed: int = 0,
    budget: float = MISSION_BUDGET,
    iterations: int = DEFAULT_EPISODE_ITERATIONS,
    c: float = math.sqrt(2.0),
    workers: int = 1,
) -> StudyReport:
    """Run each planner once per randomized case and aggregate the final
    uncertainty per (planner, target count), with paired comparisons."""
    for planner in planners:
        if planner not in ("mcts", "greedy", "random"):
            raise ValueError(f"unknown planner {planner!r}")
    args_list = [
        (seed, n, idx, tuple(planners), budget, iterations, c)
        for n in n_list
        for idx in range(cases_per_n)
    ]
    records = []
    for case_records in _run_parallel(_tracking_case, args_list, workers):
        records.extend(case_records)
    records = [
        {k: (_sig6(v) if isinstance(v, float) else v) for k, v in rec.items()}
        for rec in records
    ]

    by_planner = {}
    for planner in planners:
        per_n = {}
        for n in n_list:
            values = [
                r["final_U"]
                for r in records
                if r["planner"] == planner and r["n_targets"] == n and r["final_U"] is not None
            ]
            failures = sum(
                1
                for r in records
                if r["planner"] == planner and r["n_targets"] == n and r["final_U"] is None
            )
            mean = sum(values) / len(values) if values else None
            if values and len(values) > 1:
                std = math.sqrt(sum((v - mean) ** 2 for v in values) / (len(values) - 1))
            else:
                std = 0.0 if values else None
            per_n[str(n)] = {
                "mean_U": mean,
                "std_U": std,
                "cases": len(values),
                "failures": failures,
            }
        by_planner[planner] = per_n

    paired = {}
    for i, first in enumerate(planners):
        for second in planners[i + 1 :]:
            per_n = {}
            for n in n_list:
                wins = total = 0
                for idx in range(cases_per_n):
                    pair = {
                        r["planner"]: r["final_U"]
                        for r in records
                        if r["n_targets"] == n and r["case_id"] == idx
                    }
                    u1, u2 = pair.get(first), pair.get(second)
                    if u1 is None or u2 is None:
                        continue
                    total += 1
                    if u1 < u2:
                        wins += 1
                per_n[str(n)] = wins / total if total else None
            paired[f"{first}_beats_{second}"] = per_n

    config = {
        "n_list": list(n_list),
        "cases_per_n": cases_per_n,
        "planners": list(planners),
        "budget": budget,
        "iterations": iterations,
        "exploration_c": c,
        "agent_speed": AGENT_SPEED,
        "sensor_width": SENSOR_WIDTH,
        "tau": TIME_STEP,
    }
    return StudyReport(
        study="tracking",
        master_seed=seed,
        records=tuple(records),
        aggregates={"by_planner": by_planner, "paired_win_rate": paired},
        config=config,
    )


# -- scenario (de)serialization -----------------------------------------------


def scenario_to_dict(config: ScenarioConfig) -> dict:
    return {
        "n_targets": config.n_targets,
        "targets": [
            {"mean": list(t.mean), "cov": [list(row) for row in t.cov], "q": t.q}
            for t in config.targets
        ],
        "agent_start": list(config.agent_start),
        "v_a": config.v_a,
        "w": config.w,
        "tau": config.tau,
        "budget": config.budget,
        "planner": config.planner,
        "planner_params": {
            "iterations": config.planner_params.iterations,
            "c": config.planner_params.c,
            "seed": config.planner_params.seed,
        },
        "t_d": config.t_d,
        "r_obs": [list(row) for row in np.asarray(config.r_obs, dtype=float)],
    }


def _check_keys(mapping: dict, allowed: set, context: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ValueError(f"unknown {context} keys: {sorted(unknown)}")


def scenario_from_dict(data: dict) -> ScenarioConfig:
    _check_keys(
        data,
        {
            "n_targets", "targets", "agent_start", "v_a", "w", "tau",
            "budget", "planner", "planner_params", "t_d", "r_obs",
        },
        "scenario",
    )
    targets = []
    for entry in data["targets"]:
        _check_keys(entry, {"mean", "cov", "q"}, "target")
        targets.append(TargetSpec(mean=entry["mean"], cov=entry["cov"], q=float(entry["q"])))
    params_data = data.get("planner_params", {})
    _check_keys(params_data, {"iterations", "c", "seed"}, "planner_params")
    params = PlannerParams(
        iterations=int(params_data.get("iterations", DEFAULT_EPISODE_ITERATIONS)),
        c=float(params_data.get("c", math.sqrt(2.0))),
        seed=params_data.get("seed"),
    )
    return ScenarioConfig(
        n_targets=int(data["n_targets"]),
        targets=tuple(targets),
        agent_start=tuple(float(v) for v in data.get("agent_start", (0.0, 0.0))),
        v_a=float(data.get("v_a", AGENT_SPEED)),
        w=float(data.get("w", SENSOR_WIDTH)),
        tau=float(data.get("tau", TIME_STEP)),
        budget=float(data.get("budget", MISSION_BUDGET)),
        planner=data.get("planner", "mcts"),
        planner_params=params,
        t_d=float(data.get("t_d", 0.0)),
        r_obs=tuple(tuple(float(v) for v in row) for row in data.get("r_obs", ((1.0, 0.0), (0.0, 1.0)))),
    )


def load_scenario(path) -> ScenarioConfig:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(config: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
