"""Exception types shared across the package."""


class RpdmlError(Exception):
    """Base class for all library errors."""


class DimensionMismatchError(RpdmlError, ValueError):
    """Arguments have incompatible shapes."""


class InvariantViolationError(RpdmlError, ValueError):
    """A value does not satisfy its type invariants (e.g. not SPD)."""


class ConfigError(RpdmlError, ValueError):
    """Invalid configuration, e.g. a step size / regularizer combination."""


class BoundsError(RpdmlError, ValueError):
    """Distance-bound computation failed (degenerate distance distribution)."""


class ConstraintBuildError(RpdmlError, ValueError):
    """Pairwise constraints could not be constructed from the given labels."""


class NumericError(RpdmlError, RuntimeError):
    """A numerical routine failed (eigendecomposition, non-finite values)."""


class InnerSolveError(NumericError):
    """The inner primal minimization could not make progress."""


class DivergedError(NumericError):
    """An outer optimization run diverged; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
