"""Exception types shared across the package."""


class OsscarError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(OsscarError, ValueError):
    """Operands have incompatible dimensions."""


class NotPositiveDefiniteError(OsscarError, ArithmeticError):
    """A matrix required to be positive definite is not.

    For calibration Hessians this usually means the damping factor is too
    small for the number of samples; increase it and rebuild.
    """


class SingularBlockError(OsscarError, ArithmeticError):
    """A Schur-complement or corner block of the retained-inverse is not
    invertible.  Signals insufficient damping, never silently pseudo-inverted.
    """


class NumericalDriftError(OsscarError, ArithmeticError):
    """Incremental solver state disagrees with a from-scratch recompute."""


class GroupIndexError(OsscarError, ValueError):
    """A group index is outside [0, p)."""


class GroupStateError(OsscarError, ValueError):
    """A group is already pruned / not pruned when the operation requires
    the opposite."""


class ScheduleError(OsscarError, ValueError):
    """A search schedule is malformed or infeasible for the instance."""


class TooManySubsetsError(OsscarError):
    """Exhaustive enumeration would exceed the configured cap."""


class InconsistentSignsError(OsscarError):
    """Neither candidate update sign matches direct recomputation on every
    probe instance.  Indicates an implementation bug, not an input problem."""
