"""Exception hierarchy shared by every module."""


class GPSmoothError(Exception):
    """Base class. ``step`` is the time index when raised inside a recursion."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step

    def at_step(self, step):
        if self.step is None:
            self.step = step
            self.args = (f"{self.args[0]} (step {step})",) + self.args[1:]
        return self


class InputContractError(GPSmoothError, ValueError):
    """Shapes or values violate a documented precondition."""


class ConditioningError(GPSmoothError, ArithmeticError):
    """A matrix that must be positive definite could not be factorized."""

    def __init__(self, message, step=None, dimension=None):
        super().__init__(message, step=step)
        self.dimension = dimension


class TrainingError(GPSmoothError, RuntimeError):
    """Every restart of evidence maximization failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FilterDivergenceError(GPSmoothError, RuntimeError):
    """A covariance needed a PSD repair larger than the allowed budget."""


class ParticleDegeneracyError(GPSmoothError, RuntimeError):
    """All importance weights underflowed to zero."""
