"""Predicts the outcome of a spiral coverage sub-task before committing to it.

The covered area grows linearly with coverage time while the uncertainty
ellipse grows quadratically, so the probability of having found the target

    pcdf(k) = chi2_cdf_df2( S_cover(k) / (pi * sqrt(det Sigma_xy(k))) )

rises and then stalls.  The stall point defines the cutoff time, the maximal
find probability, and (with the incremental find mass) the expected find
time conditional on success.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .beliefs import MotionModel, TargetBelief, position_determinant_series, propagate_raw
from .errors import DegenerateEllipse, DomainError
from .spiral import intercept_raw, steps_for_duration

# One-step pcdf gain at or below this counts as stalled.
_STALL_EPS = 1e-9


@dataclass(frozen=True)
class CoverageEstimate:
    """Predicted find-probability curve of one coverage sub-task.

    `pcdf` holds (step, probability) pairs for coverage steps 0..t_cutoff/tau;
    the curve is flat at p_max beyond the cutoff.  `expected_find_time` is
    measured from coverage start (spiral arrival), `intercept_time` is the
    straight-leg duration rounded up to whole steps.
    """

    pcdf: tuple[tuple[int, float], ...]
    t_cutoff: float
    p_max: float
    expected_find_time: float
    intercept_time: float
    tau: float

    def prob_at_step(self, k: int) -> float:
        """Find probability within k coverage steps (flat after the cutoff)."""
        if not self.pcdf or k < 0:
            return 0.0
        return self.pcdf[min(k, len(self.pcdf) - 1)][1]


def chi2_cdf_df2(x: float) -> float:
    """Chi-squared CDF with two degrees of freedom: 1 - exp(-x/2)."""
    if x < 0.0:
        raise DomainError(f"chi-squared CDF argument must be >= 0, got {x}")
    return -math.expm1(-0.5 * x)


def _pcdf_values(cov: np.ndarray, model: MotionModel, v_a: float, w: float, k_limit: int) -> np.ndarray:
    """Vectorized pcdf over coverage steps 0..k_limit for a given start cov."""
    dets = position_determinant_series(cov, model, k_limit)
    if np.any(dets <= 0.0):
        raise DegenerateEllipse("position covariance determinant not positive")
    k = np.arange(k_limit + 1, dtype=float)
    s_init = math.pi * (w / 2.0) ** 2
    covered = v_a * w * k * model.tau + s_init
    args = covered / (math.pi * np.sqrt(dets))
    return -np.expm1(-0.5 * args)


def _cutoff_index(probs: np.ndarray) -> int:
    """First step whose one-step gain is at or below the stall epsilon."""
    if len(probs) < 2:
        return len(probs) - 1
    stalled = np.diff(probs) <= _STALL_EPS
    if stalled.any():
        return int(np.argmax(stalled))
    return len(probs) - 1


def _expected_find_time(probs: np.ndarray, tau: float) -> float:
    """Mean coverage time weighted by incremental find mass, given success."""
    p_max = float(probs[-1])
    if p_max <= 0.0:
        return 0.0
    mass = np.empty(len(probs))
    mass[0] = probs[0]
    mass[1:] = np.diff(probs)
    steps = np.arange(len(probs), dtype=float)
    return float((steps * tau * mass).sum() / p_max)


def estimate_subtask_raw(
    mean: np.ndarray,
    cov: np.ndarray,
    agent_pos: np.ndarray,
    v_a: float,
    w: float,
    model: MotionModel,
    max_budget_steps: int,
):
    """Fast path returning (p_find, t_find, t_miss, intercept_steps).

    Times are measured from departure: t_find = intercept + expected find
    time, t_miss = intercept + cutoff.  When the intercept alone exceeds the
    step budget, p_find is 0 and both times equal the intercept duration.
    """
    _, t_star = intercept_raw(agent_pos, v_a, mean[:2], mean[2:])
    n_i = steps_for_duration(t_star, model.tau)
    t_int = n_i * model.tau
    if n_i > max_budget_steps:
        return 0.0, t_int, t_int, n_i
    cov_arrival = cov if n_i == 0 else propagate_raw(mean, cov, model, n_i)[1]
    probs = _pcdf_values(cov_arrival, model, v_a, w, max_budget_steps - n_i)
    cut = _cutoff_index(probs)
    probs = probs[: cut + 1]
    p_max = float(probs[-1])
    t_find = t_int + _expected_find_time(probs, model.tau)
    t_miss = t_int + cut * model.tau
    return p_max, t_find, t_miss, n_i


def estimate_coverage(
    belief_at_departure: TargetBelief,
    agent_pos: np.ndarray,
    v_a: float,
    w: float,
    model: MotionModel,
    max_budget_steps: int,
) -> CoverageEstimate:
    """Full coverage-outcome estimate for a sub-task starting now.

    The belief is propagated through the (step-rounded) intercept, then the
    pcdf curve is evaluated until it stalls or the step budget runs out.
    """
    if max_budget_steps < 0:
        raise ValueError(f"max_budget_steps must be >= 0, got {max_budget_steps}")
    agent_pos = np.asarray(agent_pos, dtype=float).reshape(2)
    mean, cov = belief_at_departure.mean, belief_at_departure.cov
    _, t_star = intercept_raw(agent_pos, v_a, mean[:2], mean[2:])
    n_i = steps_for_duration(t_star, model.tau)
    t_int = n_i * model.tau
    if n_i > max_budget_steps:
        return CoverageEstimate(
            pcdf=(),
            t_cutoff=0.0,
            p_max=0.0,
            expected_find_time=0.0,
            intercept_time=t_int,
            tau=model.tau,
        )
    cov_arrival = cov if n_i == 0 else propagate_raw(mean, cov, model, n_i)[1]
    probs = _pcdf_values(cov_arrival, model, v_a, w, max_budget_steps - n_i)
    cut = _cutoff_index(probs)
    probs = probs[: cut + 1]
    return CoverageEstimate(
        pcdf=tuple((k, float(p)) for k, p in enumerate(probs)),
        t_cutoff=cut * model.tau,
        p_max=float(probs[-1]),
        expected_find_time=_expected_find_time(probs, model.tau),
        intercept_time=t_int,
        tau=model.tau,
    )


def truncate_estimate(est: CoverageEstimate, remaining_budget: float) -> CoverageEstimate:
    """Clip an estimate to the coverage time a reduced budget still allows."""
    if remaining_budget < 0.0:
        raise ValueError(f"remaining_budget must be >= 0, got {remaining_budget}")
    if not est.pcdf:
        return est
    if remaining_budget < est.intercept_time:
        return CoverageEstimate(
            pcdf=(),
            t_cutoff=0.0,
            p_max=0.0,
            expected_find_time=0.0,
            intercept_time=est.intercept_time,
            tau=est.tau,
        )
    k_lim = int(math.floor((remaining_budget - est.intercept_time) / est.tau + 1e-9))
    if k_lim >= len(est.pcdf) - 1:
        return est
    probs = np.array([p for _, p in est.pcdf[: k_lim + 1]])
    return CoverageEstimate(
        pcdf=est.pcdf[: k_lim + 1],
        t_cutoff=k_lim * est.tau,
        p_max=float(probs[-1]),
        expected_find_time=_expected_find_time(probs, est.tau),
        intercept_time=est.intercept_time,
        tau=est.tau,
    )
