"""Exception hierarchy shared by all modules.

Two families: ``ValidationError`` (bad arguments or values, CLI exit 1) and
``FormatError`` (malformed files or payloads, CLI exit 2).
"""


class SynthDepthError(Exception):
    pass


class ValidationError(SynthDepthError, ValueError):
    pass


class DomainError(ValidationError):
    """Argument outside the domain of an operation."""


class ShapeError(ValidationError):
    """Array dimensions incompatible with the operation."""


class ConfigurationError(ValidationError):
    """Scene/sensor setup that cannot be rendered, e.g. camera outside the room."""


class CapacityError(ValidationError):
    pass


class ConflictError(ValidationError):
    pass


class FormatError(SynthDepthError):
    """Malformed or unsupported container."""


class LengthError(FormatError):
    """Payload shorter (or longer) than its header promises."""


class DataError(FormatError):
    """Well-formed container carrying invalid samples (NaN, inf)."""
