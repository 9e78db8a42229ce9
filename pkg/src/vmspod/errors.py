"""Exception types shared across the package."""


class VMSPODError(Exception):
    """Base class for all package errors."""


class ValidationError(VMSPODError, ValueError):
    """Invalid configuration or precondition violation."""


class FormatError(VMSPODError):
    """Malformed, truncated or foreign binary file."""


class CompatibilityError(VMSPODError):
    """Fingerprint mismatch between a file and the space it is used with."""


class NumericalError(VMSPODError, ArithmeticError):
    """A numerical procedure failed (non-convergence, singular system, NaN)."""


class ConvergenceError(NumericalError):
    """Nonlinear iteration did not reach its tolerance."""

    def __init__(self, message, step=None, residuals=None):
        super().__init__(message)
        self.step = step
        self.residuals = list(residuals or [])


class RankError(NumericalError):
    """Requested more POD modes than the snapshot set supports."""

    def __init__(self, message, rank):
        super().__init__(message)
        self.rank = rank
