"""Exception types shared across the package."""


class GrowtrainError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(GrowtrainError, ValueError):
    """Tensor extents do not line up for the requested operation."""


class ParamError(GrowtrainError, ValueError):
    """An argument is outside its documented domain."""


class StateError(GrowtrainError, RuntimeError):
    """Operation invalid for the current model/config state."""


class InputError(GrowtrainError, ValueError):
    """A batch or sequence input violates its contract."""


class IntegrityError(GrowtrainError, RuntimeError):
    """A checkpoint or corpus file fails a consistency check."""


class ValidationError(GrowtrainError, ValueError):
    """A config or schedule fails schema/consistency validation."""
