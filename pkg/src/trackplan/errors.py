"""Exception types shared across the package."""


class SpeedInfeasible(ValueError):
    """Agent speed does not exceed the estimated target speed."""


class DegenerateEllipse(ValueError):
    """Position covariance block is not positive definite."""


class StepFailure(RuntimeError):
    """Spiral phase stepper found no root in its search window."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""
