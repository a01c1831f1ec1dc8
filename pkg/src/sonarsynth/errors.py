"""Exception hierarchy shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class BoundsError(ValidationError):
    """Geometry falls outside the world map."""


class ShapeError(ValidationError):
    """Array shape incompatible with a network or tile contract."""


class NumericError(RuntimeError):
    """Non-finite values or a failed numerical routine."""


class FormatError(IOError):
    """Persisted artifact is missing, corrupt, or version-incompatible."""
