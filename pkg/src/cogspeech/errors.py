"""Exception types shared across the package."""


class CogspeechError(Exception):
    """Base class for all package errors."""


class ParseError(CogspeechError):
    """Malformed input text. Carries the offending line number when known."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ValidationError(CogspeechError):
    """Input violates a documented invariant."""


class ConfigError(CogspeechError):
    """Bad configuration value or schema violation."""


class InputError(CogspeechError):
    """Referenced input file missing or unreadable."""


class AdapterError(CogspeechError):
    """External diarizer adapter failed."""
