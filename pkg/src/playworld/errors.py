"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An array has an incompatible shape; message names the offending axis."""


class ValidationError(ValueError):
    """An input violates a documented precondition."""


class ConfigurationError(ValueError):
    """A config combination is invalid or inconsistent."""


class CorruptionError(RuntimeError):
    """Stored data fails an integrity check; message names expected/actual."""


class TrainingFault(RuntimeError):
    """Training produced a non-finite value; message names the component."""


class StateError(RuntimeError):
    """An operation was called in an invalid state (e.g. step after done)."""
