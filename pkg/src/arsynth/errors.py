"""Exception hierarchy shared across the package."""


class ArsynthError(Exception):
    """Base class for all package errors.

    ``reason`` is a short machine-readable code used by the CLI exit path.
    """

    reason = "error"


class InvalidModelError(ArsynthError, ValueError):
    reason = "invalid-model"


class InvalidControllerError(ArsynthError, ValueError):
    reason = "invalid-controller"


class DimensionError(ArsynthError, ValueError):
    reason = "dimension-mismatch"


class InsufficientDataError(ArsynthError, ValueError):
    reason = "insufficient-data"


class DegenerateDataError(ArsynthError, ValueError):
    reason = "degenerate-data"


class AssumptionViolation(ArsynthError):
    reason = "assumption-violated"


class EmptyConsistentSetError(ArsynthError):
    reason = "empty-consistent-set"


class UnstableSystemError(ArsynthError, ValueError):
    reason = "unstable"


class SDPError(ArsynthError):
    """Raised when the semidefinite solver does not return a usable point."""

    reason = "solver-failure"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InfeasibleError(SDPError):
    reason = "infeasible"


class UnboundedError(SDPError):
    reason = "unbounded"


class NumericalError(SDPError):
    reason = "numerical-failure"
