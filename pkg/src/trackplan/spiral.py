"""Shifting elliptic spiral coverage paths.

A target's position uncertainty is an ellipse that keeps growing and drifts
with the estimated velocity.  The coverage path is an elliptic spiral defined
in a frame aligned with the ellipse axes and drifting at that velocity:

    r(theta) = a + b * theta
    e(theta) = (r * A * cos(theta), r * B * sin(theta))
    world(k) = center0 + R e(theta_k) + v_hat * k * tau

with A, B the square roots of the covariance eigenvalues and b sized so the
gap between consecutive loops never exceeds the sensor width.  Waypoints are
spaced exactly one step of constant-speed travel apart; each phase increment
is found by root-finding on the squared-displacement residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .beliefs import MotionModel, TargetBelief, predict
from .errors import DegenerateEllipse, SpeedInfeasible, StepFailure

_SCAN_RES = math.pi / 180.0
_MAX_SCAN_WIDTH = 0.5 * math.pi * 2**8


@dataclass(frozen=True)
class SpiralParams:
    """Geometry of one shifting elliptic spiral."""

    a: float
    b: float
    A: float
    B: float
    R: np.ndarray
    center0: np.ndarray
    v_hat: np.ndarray
    theta0: float = 0.0

    def frame_point(self, theta: float) -> np.ndarray:
        """Spiral point in the ellipse-aligned frame."""
        r = self.a + self.b * theta
        return np.array([r * self.A * math.cos(theta), r * self.B * math.sin(theta)])

    def world_point(self, theta: float, t_since_start: float) -> np.ndarray:
        """Spiral point in the world frame after drifting for t_since_start."""
        return self.center0 + self.R @ self.frame_point(theta) + self.v_hat * t_since_start


@dataclass(frozen=True)
class CoveragePlan:
    """Waypoint sequence: straight intercept leg followed by the spiral."""

    waypoints: np.ndarray  # (N, 2), one waypoint per time step
    thetas: np.ndarray  # (N,), zero over the intercept leg
    intercept_steps: int
    start_time: float
    cutoff_step: int

    def __post_init__(self) -> None:
        wps = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "waypoints", wps)
        object.__setattr__(self, "thetas", np.asarray(self.thetas, dtype=float).reshape(-1))

    def __len__(self) -> int:
        return len(self.waypoints)


def make_spiral_params(
    sigma_xy: np.ndarray,
    center: np.ndarray,
    v_hat: np.ndarray,
    w: float,
    v_a: float,
) -> SpiralParams:
    """Fit spiral geometry to a position covariance.

    Semi-axis scales are the square roots of the eigenvalues (descending),
    the rotation columns are the matching unit eigenvectors arranged
    right-handed, and the radial growth rate b = w / (2 pi max(A, B)) keeps
    both loop gaps within the sensor width.
    """
    sigma = np.asarray(sigma_xy, dtype=float)
    v_hat = np.asarray(v_hat, dtype=float).reshape(2)
    if w <= 0.0:
        raise ValueError(f"sensor width must be positive, got {w}")
    speed = float(np.hypot(v_hat[0], v_hat[1]))
    if v_a <= speed:
        raise SpeedInfeasible(f"agent speed {v_a} must exceed target speed {speed}")
    if sigma.shape != (2, 2) or abs(sigma[0, 1] - sigma[1, 0]) > 1e-9 * (1.0 + np.abs(sigma).max()):
        raise DegenerateEllipse("covariance must be a symmetric 2x2 matrix")
    evals, evecs = np.linalg.eigh(sigma)
    lam2, lam1 = float(evals[0]), float(evals[1])
    if lam2 <= 0.0:
        raise DegenerateEllipse(f"covariance not positive definite (eigenvalue {lam2})")
    A, B = math.sqrt(lam1), math.sqrt(lam2)
    if lam1 - lam2 <= 1e-12 * lam1:
        # Circular ellipse: orientation is arbitrary, pin it to the world axes.
        R = np.eye(2)
    else:
        u1 = evecs[:, 1]
        if u1[0] < 0.0 or (u1[0] == 0.0 and u1[1] < 0.0):
            u1 = -u1
        R = np.column_stack([u1, [-u1[1], u1[0]]])
    b = w / (2.0 * math.pi * A)
    return SpiralParams(
        a=0.0,
        b=b,
        A=A,
        B=B,
        R=R,
        center0=np.asarray(center, dtype=float).reshape(2).copy(),
        v_hat=v_hat.copy(),
        theta0=0.0,
    )


def step_theta(theta_k: float, params: SpiralParams, v_a: float, tau: float) -> float:
    """Advance the spiral phase by one constant-speed time step.

    Returns the smallest theta > theta_k at which the world-frame
    displacement from the point at theta_k (the spiral frame having drifted
    by v_hat * tau in between) equals v_a * tau.  The residual is scanned at
    one-degree resolution from theta_k, the window growing up to 2^8 times
    its initial quarter-turn, and the first sign change is bisected.
    """
    if theta_k < params.theta0:
        raise ValueError(f"theta_k {theta_k} below spiral start {params.theta0}")
    a, b, A, B = params.a, params.b, params.A, params.B
    # Rotating the drift into the spiral frame keeps the residual scalar-only.
    sx, sy = params.R.T @ (params.v_hat * tau)
    r_k = a + b * theta_k
    ex_k = r_k * A * math.cos(theta_k) - sx
    ey_k = r_k * B * math.sin(theta_k) - sy
    step2 = (v_a * tau) ** 2

    def residual(theta: float) -> float:
        r = a + b * theta
        dx = r * A * math.cos(theta) - ex_k
        dy = r * B * math.sin(theta) - ey_k
        return dx * dx + dy * dy - step2

    lo = theta_k
    f_lo = residual(lo)
    hi = None
    n_max = int(math.ceil(_MAX_SCAN_WIDTH / _SCAN_RES))
    for j in range(1, n_max + 1):
        theta = theta_k + j * _SCAN_RES
        f = residual(theta)
        if f >= 0.0:
            hi, f_hi = theta, f
            break
        lo, f_lo = theta, f
    if hi is None:
        raise StepFailure(f"no phase step found within {_MAX_SCAN_WIDTH:.1f} rad of theta={theta_k}")
    if f_hi == 0.0:
        return hi
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            return hi
        f_mid = residual(mid)
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
            if f_mid == 0.0:
                return hi


def intercept_raw(agent_pos: np.ndarray, v_a: float, center: np.ndarray, v_hat: np.ndarray):
    """Interception math on raw arrays; see `intercept`."""
    d = center - agent_pos
    gap = v_a * v_a - float(v_hat @ v_hat)
    if gap <= 0.0:
        raise SpeedInfeasible(
            f"agent speed {v_a} must exceed target speed {np.linalg.norm(v_hat)}"
        )
    d2 = float(d @ d)
    if d2 == 0.0:
        return center.copy(), 0.0
    dv = float(d @ v_hat)
    t = (dv + math.sqrt(dv * dv + gap * d2)) / gap
    return center + v_hat * t, t


def intercept(agent_pos: np.ndarray, v_a: float, belief: TargetBelief):
    """Earliest constant-speed interception of the drifting belief center.

    Solves ||center + v_hat t - agent_pos|| = v_a t for the smallest t >= 0.
    Returns (interception point, t).  Callers round t up to whole time steps
    when scheduling.
    """
    agent_pos = np.asarray(agent_pos, dtype=float).reshape(2)
    return intercept_raw(agent_pos, v_a, belief.position, belief.velocity)


def steps_for_duration(duration: float, tau: float) -> int:
    """Whole time steps needed to cover `duration`, rounded up on-grid."""
    return max(0, int(math.ceil(duration / tau - 1e-9)))


def build_coverage_plan(
    agent_pos: np.ndarray,
    v_a: float,
    w: float,
    belief: TargetBelief,
    model: MotionModel,
    cutoff_step: int,
) -> CoveragePlan:
    """Intercept the belief center, then spiral over the propagated ellipse.

    The spiral is fitted to the covariance at intercept arrival (the ellipse
    keeps growing during the straight leg), centered on the interception
    point, and truncated after `cutoff_step` spiral waypoints.
    """
    if cutoff_step < 0:
        raise ValueError(f"cutoff_step must be >= 0, got {cutoff_step}")
    agent_pos = np.asarray(agent_pos, dtype=float).reshape(2)
    tau = model.tau
    point, t_star = intercept(agent_pos, v_a, belief)
    n_i = steps_for_duration(t_star, tau)
    arrival = predict(belief, model, n_i) if n_i > 0 else belief
    params = make_spiral_params(arrival.position_cov, point, belief.velocity, w, v_a)

    waypoints: list[np.ndarray] = []
    thetas: list[float] = []
    if n_i > 0:
        direction = (point - agent_pos) / (v_a * t_star)
        for j in range(1, n_i):
            waypoints.append(agent_pos + direction * (v_a * tau * j))
            thetas.append(0.0)
        waypoints.append(point)
        thetas.append(0.0)
    theta = params.theta0
    for k in range(1, cutoff_step + 1):
        theta = step_theta(theta, params, v_a, tau)
        waypoints.append(params.world_point(theta, k * tau))
        thetas.append(theta)
    wps = np.array(waypoints) if waypoints else np.empty((0, 2))
    return CoveragePlan(
        waypoints=wps,
        thetas=np.array(thetas),
        intercept_steps=n_i,
        start_time=belief.time,
        cutoff_step=cutoff_step,
    )
