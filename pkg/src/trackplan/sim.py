"""Ground-truth simulation and the closed-loop episode executor.

Targets move with sampled process noise; the agent flies planner output,
detects any target inside its circular footprint, and Kalman-updates the
matching belief.  An episode runs the full decide / intercept / cover /
replan cycle until the mission budget depletes and reports the final
uncertainty together with full logs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .beliefs import (
    MotionModel,
    ObservationModel,
    TargetBelief,
    logdet_xy_raw,
    predict,
    uncertainty_metric,
    update,
)
from .errors import DegenerateEllipse, SpeedInfeasible, StepFailure
from .estimator import estimate_coverage
from .mcts import History, MctsChooser, Outcome, ReplanDecision
from .spiral import build_coverage_plan

_CHOL_CACHE: dict[tuple, np.ndarray] = {}


def _chol_q(model: MotionModel) -> Optional[np.ndarray]:
    if model.q == 0.0:
        return None
    key = (model.tau, model.q)
    if key not in _CHOL_CACHE:
        _CHOL_CACHE[key] = np.linalg.cholesky(model.Q)
    return _CHOL_CACHE[key]


@dataclass(frozen=True)
class TargetTruth:
    """True state of one target; advanced only by its motion model."""

    state: np.ndarray
    model: MotionModel

    def __post_init__(self) -> None:
        object.__setattr__(self, "state", np.asarray(self.state, dtype=float).reshape(4))
        _chol_q(self.model)  # fails early if Q is not PSD

    @property
    def position(self) -> np.ndarray:
        return self.state[:2]


def step_truth(truth: TargetTruth, rng: np.random.Generator) -> TargetTruth:
    """Advance one step: F state plus process noise sampled from N(0, Q)."""
    state = truth.model.F @ truth.state
    chol = _chol_q(truth.model)
    if chol is not None:
        state = state + chol @ rng.standard_normal(4)
    return TargetTruth(state, truth.model)


def detect(
    agent_pos: np.ndarray,
    truth: TargetTruth,
    w: float,
    rng: np.random.Generator,
    obs: ObservationModel,
) -> Optional[np.ndarray]:
    """Noisy position measurement if the target is inside the footprint.

    Detection is deterministic given geometry: inside means within w/2 of
    the agent, boundary inclusive.
    """
    delta = truth.state[:2] - agent_pos
    if float(delta @ delta) <= (w / 2.0) ** 2:
        noise = np.linalg.cholesky(obs.R_obs) @ rng.standard_normal(2)
        return truth.state[:2] + noise
    return None


@dataclass(frozen=True)
class Snapshot:
    """World state handed to a planner at a decision point."""

    beliefs: tuple[TargetBelief, ...]
    agent_pos: np.ndarray
    available: tuple[int, ...]
    remaining_budget: float
    history: History
    models: tuple[MotionModel, ...]
    obs: ObservationModel
    v_a: float
    w: float


class TargetChooser(Protocol):
    def first_target(self, snapshot: Snapshot) -> Optional[int]: ...

    def conditional(self, snapshot: Snapshot, pursued: int) -> Optional[ReplanDecision]: ...


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome record of one simulated mission."""

    final_U: float
    detections: tuple[tuple[float, int], ...]
    agent_track: np.ndarray  # (steps + 1, 2) including the start pose
    belief_logdets: np.ndarray  # (steps + 1, n_targets) log det position cov
    measurements: tuple[tuple[float, int, float, float], ...]
    seed: int
    failure: Optional[str] = None


def _make_chooser(config, models, obs, rng: np.random.Generator) -> TargetChooser:
    # A planner-params seed pins the planner stream independently of the
    # episode seed (world noise stays tied to the episode).
    if config.planner_params.seed is not None:
        rng = np.random.default_rng(config.planner_params.seed)
    if config.planner == "mcts":
        return MctsChooser(
            models, obs, config.v_a, config.w,
            iterations=config.planner_params.iterations,
            c=config.planner_params.c,
            rng=rng,
        )
    from .bench import GreedyChooser, RandomChooser

    if config.planner == "greedy":
        return GreedyChooser()
    if config.planner == "random":
        return RandomChooser(rng)
    raise ValueError(f"unknown planner {config.planner!r}")


def run_episode(config, seed: int, dwell: int = 1, chooser: Optional[TargetChooser] = None) -> EpisodeResult:
    """Execute one mission: plan, intercept, cover, replan until depletion.

    Time never advances while planning.  A coverage ends when the pursued
    target is detected or the plan (truncated at its cutoff) is exhausted;
    the conditional replan decides the follow-up, falling back to a fresh
    search when it has no statistics for the realized outcome.  Re-choosing
    the target found last switches to following it until depletion.
    """
    if dwell < 1:
        raise ValueError(f"dwell must be >= 1, got {dwell}")
    n = config.n_targets
    tau = config.tau
    steps_total = int(round(config.budget / tau))
    streams = np.random.SeedSequence(seed).spawn(3)
    truth_rng = np.random.default_rng(streams[0])
    meas_rng = np.random.default_rng(streams[1])
    plan_rng = np.random.default_rng(streams[2])

    models = tuple(MotionModel(tau, t.q) for t in config.targets)
    obs = ObservationModel(np.asarray(config.r_obs, dtype=float))
    beliefs = [TargetBelief(t.mean, t.cov, 0.0) for t in config.targets]
    truths = [
        TargetTruth(
            b.mean + np.linalg.cholesky(b.cov) @ truth_rng.standard_normal(4),
            models[i],
        )
        for i, b in enumerate(beliefs)
    ]
    agent = np.asarray(config.agent_start, dtype=float).reshape(2).copy()
    if chooser is None:
        chooser = _make_chooser(config, models, obs, plan_rng)

    available = list(range(n))
    history: list[tuple[int, Outcome]] = []
    detections: list[tuple[float, int]] = []
    measurements: list[tuple[float, int, float, float]] = []
    agent_track = [agent.copy()]
    logdets = [[logdet_xy_raw(b.cov) for b in beliefs]]

    mode = "decide"
    pursued = -1
    plan = None
    wp_idx = 0
    conditional: Optional[ReplanDecision] = None
    pending: Optional[int] = None
    dwell_left = 0
    failure: Optional[str] = None
    t = 0

    def snapshot() -> Snapshot:
        return Snapshot(
            beliefs=tuple(beliefs),
            agent_pos=agent.copy(),
            available=tuple(available),
            remaining_budget=(steps_total - t) * tau,
            history=tuple(history),
            models=models,
            obs=obs,
            v_a=config.v_a,
            w=config.w,
        )

    def next_decision(target: Optional[int]) -> None:
        nonlocal mode, pending
        pending = target if target is not None and target in available else None
        mode = "decide"

    while t < steps_total:
        if mode == "decide":
            if not available:
                mode = "idle"
            else:
                target = pending if pending is not None else chooser.first_target(snapshot())
                pending = None
                if target is None or target not in available:
                    mode = "idle"
                elif history and history[-1] == (target, Outcome.FIND):
                    pursued = target
                    mode = "follow"
                else:
                    try:
                        est = estimate_coverage(
                            beliefs[target], agent, config.v_a, config.w,
                            models[target], steps_total - t,
                        )
                        plan = build_coverage_plan(
                            agent, config.v_a, config.w, beliefs[target],
                            models[target], int(round(est.t_cutoff / tau)),
                        )
                    except (SpeedInfeasible, DegenerateEllipse, StepFailure) as exc:
                        failure = f"{type(exc).__name__}: {exc}"
                        break
                    pursued = target
                    wp_idx = 0
                    mode = "cover"
                    conditional = chooser.conditional(snapshot(), pursued)
                    if len(plan) == 0:
                        # Degenerate coverage (already on target, zero cutoff):
                        # counts as an immediate miss, consuming no time.
                        history.append((pursued, Outcome.MISS))
                        available.remove(pursued)
                        next_decision(conditional.on_miss if conditional else None)
            continue

        # Advance the world by one step.
        for i in range(n):
            truths[i] = step_truth(truths[i], truth_rng)
            beliefs[i] = predict(beliefs[i], models[i], 1)
        if mode == "cover":
            agent = plan.waypoints[wp_idx].copy()
            wp_idx += 1
        elif mode == "follow":
            delta = beliefs[pursued].position - agent
            dist = float(np.hypot(delta[0], delta[1]))
            limit = config.v_a * tau
            agent = beliefs[pursued].position.copy() if dist <= limit else agent + delta * (limit / dist)
        # idle and dwell hold position
        t += 1
        agent_track.append(agent.copy())

        found_pursued = False
        for i in range(n):
            z = detect(agent, truths[i], config.w, meas_rng, obs)
            if z is not None:
                beliefs[i] = update(beliefs[i], z, obs)
                detections.append((t * tau, i))
                measurements.append((t * tau, i, float(z[0]), float(z[1])))
                if i == pursued and mode == "cover":
                    found_pursued = True
        logdets.append([logdet_xy_raw(b.cov) for b in beliefs])

        if mode == "cover":
            if found_pursued:
                history.append((pursued, Outcome.FIND))
                if dwell > 1:
                    dwell_left = dwell - 1
                    mode = "dwell"
                else:
                    next_decision(conditional.on_find if conditional else None)
            elif wp_idx >= len(plan):
                history.append((pursued, Outcome.MISS))
                available.remove(pursued)
                next_decision(conditional.on_miss if conditional else None)
        elif mode == "dwell":
            dwell_left -= 1
            if dwell_left <= 0:
                next_decision(conditional.on_find if conditional else None)

    if failure is None:
        final_u = uncertainty_metric(beliefs, steps_total * tau, models)
    else:
        final_u = float("nan")
    return EpisodeResult(
        final_U=final_u,
        detections=tuple(detections),
        agent_track=np.array(agent_track),
        belief_logdets=np.array(logdets),
        measurements=tuple(measurements),
        seed=seed,
        failure=failure,
    )
