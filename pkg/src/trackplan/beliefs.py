"""Gaussian target beliefs: constant-velocity motion model, Kalman
prediction/update, and the summed log-determinant uncertainty metric.

State layout is [x, y, vx, vy].  All covariance math keeps the 2x2 block
structure of that layout, which lets multi-step prediction be evaluated in
closed form instead of iterating the one-step recurrence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateEllipse

_I2 = np.eye(2)


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class MotionModel:
    """Discrete constant-velocity model with white process noise.

    F = [[I2, tau*I2], [0, I2]] and Q = q * [[tau^3/3 I2, tau^2/2 I2],
    [tau^2/2 I2, I2]].  Both are derived from (tau, q) at construction.
    """

    tau: float
    q: float
    F: np.ndarray = field(init=False, repr=False, compare=False)
    Q: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        tau = float(self.tau)
        q = float(self.q)
        if tau <= 0.0:
            raise ValueError(f"tau must be positive, got {tau}")
        if q < 0.0:
            raise ValueError(f"q must be non-negative, got {q}")
        # Q is PSD only while tau^3/3 - tau^4/4 >= 0 for the given block form.
        if q > 0.0 and tau > 4.0 / 3.0:
            raise ValueError(f"Q not PSD for tau={tau} (requires tau <= 4/3)")
        F = np.eye(4)
        F[0, 2] = F[1, 3] = tau
        Q = q * np.block(
            [
                [tau**3 / 3.0 * _I2, tau**2 / 2.0 * _I2],
                [tau**2 / 2.0 * _I2, _I2],
            ]
        )
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Q", Q)


@dataclass(frozen=True)
class ObservationModel:
    """Position-only observation with Gaussian noise: z = H x + v."""

    R_obs: np.ndarray = field(default_factory=lambda: np.eye(2))
    H: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        R = np.array(self.R_obs, dtype=float)
        if R.shape != (2, 2):
            raise ValueError(f"R_obs must be 2x2, got {R.shape}")
        if abs(R[0, 1] - R[1, 0]) > 1e-12 * (1.0 + np.abs(R).max()):
            raise ValueError("R_obs must be symmetric")
        if R[0, 0] <= 0.0 or np.linalg.det(R) <= 0.0:
            raise ValueError("R_obs must be positive definite")
        H = np.hstack([_I2, np.zeros((2, 2))])
        object.__setattr__(self, "R_obs", R)
        object.__setattr__(self, "H", H)


@dataclass(frozen=True)
class TargetBelief:
    """Gaussian estimate of one target's state at a given time."""

    mean: np.ndarray
    cov: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float).reshape(4)
        cov = np.array(self.cov, dtype=float)
        if cov.shape != (4, 4):
            raise ValueError(f"cov must be 4x4, got {cov.shape}")
        scale = 1.0 + np.abs(cov).max()
        if np.abs(cov - cov.T).max() > 1e-9 * scale:
            raise ValueError("cov must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "time", float(self.time))

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[2:]

    @property
    def position_cov(self) -> np.ndarray:
        return self.cov[:2, :2]


def _accumulated_noise_terms(model: MotionModel, steps: int | np.ndarray):
    """Accumulated process noise of `steps` one-step predictions.

    Returns the per-axis scalars (n00, n01, n11) of the block matrix
    sum_{j=0}^{k-1} F^j Q F^j^T; exact for any step count.  Accepts an
    integer or an integer array (vectorized over step counts).
    """
    k = np.asarray(steps, dtype=float)
    tau, q = model.tau, model.q
    alpha = q * tau**3 / 3.0
    beta = q * tau**2 / 2.0
    gamma = q
    n00 = k * alpha + beta * tau * k * (k - 1.0) + gamma * tau**2 * (k - 1.0) * k * (2.0 * k - 1.0) / 6.0
    n01 = k * beta + gamma * tau * k * (k - 1.0) / 2.0
    n11 = k * gamma
    return n00, n01, n11


def propagate_raw(mean: np.ndarray, cov: np.ndarray, model: MotionModel, steps: int):
    """Closed-form `steps`-step prediction on raw (mean, cov) arrays.

    Equals iterating mean <- F mean, cov <- F cov F^T + Q `steps` times.
    """
    if steps == 0:
        return mean, cov
    s = steps * model.tau
    n00, n01, n11 = _accumulated_noise_terms(model, steps)
    new_mean = mean.copy()
    new_mean[0] += s * mean[2]
    new_mean[1] += s * mean[3]
    P = cov[:2, :2]
    C = cov[:2, 2:]
    V = cov[2:, 2:]
    cross = C + s * V
    cross = cross + n01 * _I2
    new_cov = np.empty((4, 4))
    new_cov[:2, :2] = P + s * (C + C.T) + s * s * V + n00 * _I2
    new_cov[:2, 2:] = cross
    new_cov[2:, :2] = cross.T
    new_cov[2:, 2:] = V + n11 * _I2
    return new_mean, _sym(new_cov)


def update_raw(mean: np.ndarray, cov: np.ndarray, z: np.ndarray, obs: ObservationModel):
    """Kalman measurement update on raw arrays (position measurement)."""
    S = cov[:2, :2] + obs.R_obs
    # K = cov H^T S^-1, with H selecting the position block.
    K = np.linalg.solve(S, cov[:2, :]).T
    innovation = z - mean[:2]
    new_mean = mean + K @ innovation
    IKH = np.eye(4)
    IKH[:, :2] -= K
    new_cov = IKH @ cov @ IKH.T + K @ obs.R_obs @ K.T
    return new_mean, _sym(new_cov)


def predict(belief: TargetBelief, model: MotionModel, steps: int) -> TargetBelief:
    """Propagate a belief forward by `steps` time steps of size tau."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    mean, cov = propagate_raw(belief.mean, belief.cov, model, int(steps))
    return TargetBelief(mean, cov, belief.time + steps * model.tau)


def update(belief: TargetBelief, z: np.ndarray, obs: ObservationModel) -> TargetBelief:
    """Condition a belief on a position measurement z."""
    z = np.asarray(z, dtype=float).reshape(2)
    mean, cov = update_raw(belief.mean, belief.cov, z, obs)
    return TargetBelief(mean, cov, belief.time)


def logdet_xy_raw(cov: np.ndarray) -> float:
    """log det of the 2x2 position block; raises if the block is not PD."""
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * c - b * b
    if det <= 0.0 or a <= 0.0:
        raise DegenerateEllipse(f"position covariance not PD (det={det})")
    return float(np.log(det))


def uncertainty_metric(
    beliefs: Sequence[TargetBelief],
    horizon_time: float,
    models: Sequence[MotionModel],
) -> float:
    """Sum of log det position covariances with every belief propagated to
    `horizon_time` first.  Natural logarithm."""
    if len(beliefs) != len(models):
        raise ValueError("need one motion model per belief")
    total = 0.0
    for belief, model in zip(beliefs, models):
        dt = horizon_time - belief.time
        steps = int(round(dt / model.tau))
        if steps < 0 or abs(dt - steps * model.tau) > 1e-6:
            raise ValueError(
                f"horizon {horizon_time} not reachable from t={belief.time} on the tau grid"
            )
        cov = belief.cov
        if steps > 0:
            _, cov = propagate_raw(belief.mean, cov, model, steps)
        total += logdet_xy_raw(cov)
    return total


def position_determinant_series(cov: np.ndarray, model: MotionModel, k_max: int) -> np.ndarray:
    """det of the position covariance after k = 0..k_max prediction steps.

    Vectorized closed form of the same propagation performed by `predict`.
    """
    k = np.arange(k_max + 1, dtype=float)
    s = k * model.tau
    n00, _, _ = _accumulated_noise_terms(model, k)
    P = cov[:2, :2]
    C = cov[:2, 2:]
    V = cov[2:, 2:]
    cs = C + C.T
    m00 = P[0, 0] + s * cs[0, 0] + s * s * V[0, 0] + n00
    m11 = P[1, 1] + s * cs[1, 1] + s * s * V[1, 1] + n00
    m01 = P[0, 1] + s * cs[0, 1] + s * s * V[0, 1]
    return m00 * m11 - m01 * m01


_STEADY_CACHE: dict[tuple, np.ndarray] = {}


def steady_state_tracked_cov(model: MotionModel, obs: ObservationModel) -> np.ndarray:
    """Posterior covariance fixed point of predict-then-update cycles.

    This is the covariance a continuously observed target settles at; it is
    independent of the starting covariance for this observable system.
    """
    key = (model.tau, model.q, obs.R_obs.tobytes())
    cached = _STEADY_CACHE.get(key)
    if cached is not None:
        return cached
    cov = np.eye(4) * 100.0
    mean = np.zeros(4)
    z = np.zeros(2)
    for _ in range(100_000):
        _, pred = propagate_raw(mean, cov, model, 1)
        _, post = update_raw(mean, pred, z, obs)
        if np.abs(post - cov).max() <= 1e-12 * (1.0 + np.abs(post).max()):
            cov = post
            break
        cov = post
    else:
        raise RuntimeError("tracked-covariance iteration did not converge")
    _STEADY_CACHE[key] = cov
    return cov
