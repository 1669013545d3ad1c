"""Exception hierarchy shared across the pipeline."""


class EmofuseError(Exception):
    """Base class for all package errors."""


class ParseError(EmofuseError):
    """Malformed input text. ``line`` is 1-based and counts the header."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(EmofuseError):
    """Structurally valid input that violates a data invariant."""


class ConfigError(EmofuseError):
    """Bad parameters or configuration values."""


class MappingError(ConfigError):
    """Column mapping inconsistent with the source data."""


class DomainError(EmofuseError, ValueError):
    """Numeric input outside an operation's domain (e.g. NaN coordinates)."""


class CalibrationError(EmofuseError):
    """Threshold calibration could not be performed."""


class MissingDescriptorError(EmofuseError, KeyError):
    """A rule referenced a feature that the window does not carry."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing descriptor"


class BufferNotReady(EmofuseError):
    """Final prediction requested before the result buffer is full."""


class StructuralDiffError(EmofuseError):
    """Computed and reference reports do not cover the same classes."""
