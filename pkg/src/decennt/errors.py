"""Exception hierarchy.

Every error raised deliberately by the package derives from ``DecenntError``.
The CLI maps ``ValidationError`` subclasses to exit code 2 and ``UsageError``
to exit code 1.
"""


class DecenntError(Exception):
    """Base class for all package errors."""


class UsageError(DecenntError, RuntimeError):
    """An API was called in the wrong order or with the wrong kind of object."""


class ValidationError(DecenntError, ValueError):
    """Inputs or configuration failed validation."""


class DimensionError(ValidationError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValidationError):
    """A configuration value is invalid in the current mode."""


class InputError(ValidationError):
    """Data passed to an operation is malformed or out of range."""


class FormatError(InputError):
    """A file does not match the expected on-disk format."""


class StratificationError(ValidationError):
    """A stratified split is impossible for the given class counts."""


class StabilityError(ValidationError):
    """A generative process is not stable (spectral radius too large)."""


class ParameterError(ValidationError):
    """A generator or evaluation parameter is out of its valid range."""


class MetricError(ValidationError):
    """A metric is undefined for the given inputs."""


class CorrelationError(ValidationError):
    """A correlation is undefined, usually because a series is constant."""
