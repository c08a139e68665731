"""Exception types shared across the package."""


class ManrkError(Exception):
    """Base class for all package errors."""


class DomainError(ManrkError, ValueError):
    """Raised for non-finite or otherwise out-of-domain numeric input."""


class SingularProjectionError(ManrkError, ValueError):
    """Raised when the constraint gradient is too small to project against."""


class TableauStructureError(ManrkError, ValueError):
    """Raised when tableau arrays are malformed (shapes, non-finite, bad delta)."""


class InvalidTableauError(ManrkError, ValueError):
    """Raised when a structurally well-formed tableau violates class invariants."""


class PreconditionError(ManrkError, ValueError):
    """Raised when an operation's stated precondition does not hold."""


class NewtonFailureError(ManrkError, RuntimeError):
    """Raised when a stage solve does not converge.

    Attributes
    ----------
    stage : int
        Zero-based stage index where the solve failed, -1 if unknown.
    """

    def __init__(self, message: str, stage: int = -1):
        super().__init__(message)
        self.stage = stage


class SweepConvergenceError(NewtonFailureError):
    """Raised when coupled-stage Gauss-Seidel sweeps fail to settle."""


class QualityError(ManrkError, RuntimeError):
    """Raised when an ensemble estimate violates a quality gate (discard ceiling)."""


class QuadratureError(ManrkError, RuntimeError):
    """Raised when a reference quadrature does not self-converge."""


class ConfigError(ManrkError, ValueError):
    """Raised for invalid run configuration (CLI and SimConfig validation)."""
