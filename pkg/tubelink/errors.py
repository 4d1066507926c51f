"""Exception hierarchy shared by every tubelink module."""

from typing import Optional


class TubeLinkError(Exception):
    """Base class for all tubelink errors."""


class DomainError(TubeLinkError, ValueError):
    """An input violates a domain invariant (bad box, class mismatch, ...)."""


class ConfigError(TubeLinkError, ValueError):
    """Configuration value out of range or unparsable."""


class SequencingError(TubeLinkError):
    """Frames of a stream arrived out of order."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RecordError(TubeLinkError):
    """A detection / tube / ground-truth record could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
