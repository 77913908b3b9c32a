"""Hierarchical planning for long-horizon multi-target tracking.

A single constant-speed agent tracks several targets whose Gaussian beliefs
grow under a constant-velocity motion model.  The package provides:

- Kalman belief propagation and the log-det uncertainty metric (`beliefs`);
- shifting elliptic spiral coverage paths over a growing belief ellipse
  (`spiral`);
- an analytic estimator of coverage success probability and timing
  (`estimator`);
- a Monte Carlo tree search planner sequencing coverage sub-tasks to
  minimize final uncertainty under a time budget (`mcts`);
- a ground-truth simulator and episode executor (`sim`);
- a batch experiment harness with baseline planners and deterministic
  CSV/JSON reports (`bench`, `cli`).
"""

from .beliefs import (
    MotionModel,
    ObservationModel,
    TargetBelief,
    predict,
    uncertainty_metric,
    update,
)
from .errors import DegenerateEllipse, DomainError, SpeedInfeasible, StepFailure
from .estimator import CoverageEstimate, chi2_cdf_df2, estimate_coverage, truncate_estimate
from .mcts import MctsPlanner, Outcome, ReplanDecision
from .sim import EpisodeResult, TargetTruth, detect, run_episode, step_truth
from .spiral import CoveragePlan, SpiralParams, build_coverage_plan, intercept, make_spiral_params, step_theta

__all__ = [
    "MotionModel",
    "ObservationModel",
    "TargetBelief",
    "predict",
    "update",
    "uncertainty_metric",
    "SpiralParams",
    "CoveragePlan",
    "make_spiral_params",
    "step_theta",
    "intercept",
    "build_coverage_plan",
    "CoverageEstimate",
    "chi2_cdf_df2",
    "estimate_coverage",
    "truncate_estimate",
    "MctsPlanner",
    "Outcome",
    "ReplanDecision",
    "TargetTruth",
    "EpisodeResult",
    "step_truth",
    "detect",
    "run_episode",
    "SpeedInfeasible",
    "DegenerateEllipse",
    "StepFailure",
    "DomainError",
]

__version__ = "0.1.0"
