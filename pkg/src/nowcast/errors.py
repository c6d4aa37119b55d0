"""Exception hierarchy shared across the package."""


class NowcastError(Exception):
    """Base class for all package errors."""


class ValidationError(NowcastError, ValueError):
    """Input violates a documented precondition."""


class ObservationError(ValidationError):
    """A single observation record failed validation.

    ``reason`` is a short machine-readable code such as ``"non_finite"``.
    """

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


class EmptySnapshotError(NowcastError):
    pass


class UnknownSeriesError(ValidationError):
    pass


class MissingTargetError(ValidationError):
    pass


class SingularSystemError(NowcastError):
    pass


class ConvergenceError(NowcastError):
    """Iterative solver stopped before meeting its tolerance."""

    def __init__(self, message: str, gap: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.gap = gap
        self.iterations = iterations


class DivergenceError(NowcastError):
    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class ShapeError(ValidationError):
    pass


class UnsupportedModelError(ValidationError):
    """Operation is not defined for the given model family."""


class BootstrapError(NowcastError):
    pass


class InsufficientReplicatesError(ValidationError):
    pass


class ReleaseRefusedError(NowcastError):
    def __init__(self, message: str, violations=()):
        super().__init__(message)
        self.violations = tuple(violations)
