"""Exception hierarchy shared across the package."""


class FsimError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(FsimError, ValueError):
    pass


class OutOfDomainError(InvalidArgumentError):
    """Evaluation point lies outside a basis (or smoothed-series) domain."""


class DegenerateDataError(InvalidArgumentError):
    pass


class EmptyDatasetError(InvalidArgumentError):
    pass


class IllConditionedError(FsimError, ArithmeticError):
    """A linear system stayed singular after the full jitter escalation."""


class DegenerateSmootherError(FsimError, ArithmeticError):
    """Smoother leaves no residual degrees of freedom (tr(S) >= n or df_res <= 0)."""


class DegenerateFunctionalError(FsimError, ArithmeticError):
    """The Jensen functional is identically zero (zero-norm weights or zero sd)."""


class InvalidCorrelationError(FsimError, ArithmeticError):
    pass


class NumericFailure(FsimError, ArithmeticError):
    """Non-finite objective during optimization.

    ``last_x`` holds the last iterate with a finite objective.
    """

    def __init__(self, message, last_x=None):
        super().__init__(message)
        self.last_x = last_x


class SurfaceInvalidError(FsimError):
    """Too many grid cells failed for the Jensen surface to be trusted."""


class SchemaError(InvalidArgumentError):
    """Malformed input file; the message names the offending row and column."""
