# capillary_bernoulli/exceptions.py
"""
Error hierarchy for the capillary Bernoulli toolkit.

Library code raises these; the command line maps them to exit codes.
"""

from typing import Optional, Sequence, Tuple

# Exit codes used by the CLI
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_INTERNAL = 4


class CapBernError(Exception):
    """Base class for every error raised by the package."""

    exit_code = EXIT_INTERNAL


class ConfigurationError(CapBernError):
    """Invalid configuration: bad spacing, unknown key, unknown family."""

    exit_code = EXIT_CONFIG

    def __init__(
        self, message: str, key: Optional[str] = None, line: Optional[int] = None
    ) -> None:
        self.message = message
        self.key = key
        self.line = line
        location = ""
        if key is not None:
            location += f" [key: {key}]"
        if line is not None:
            location += f" [line: {line}]"
        super().__init__(f"{message}{location}")


class DomainError(CapBernError):
    """A mathematical precondition does not hold for the given input."""


class ResolutionError(DomainError):
    """Requested scale is below what the grid resolves."""


class PreconditionError(DomainError):
    """Input field violates the precondition of an operation."""


class OutOfDomainError(DomainError):
    """Resampling targets fall outside the source grid."""

    def __init__(self, message: str, offending: Sequence[Tuple[int, ...]] = ()) -> None:
        self.offending = list(offending)
        shown = ", ".join(str(idx) for idx in self.offending[:10])
        extra = len(self.offending) - 10
        more = f" (+{extra} more)" if extra > 0 else ""
        suffix = f": {shown}{more}" if self.offending else ""
        super().__init__(f"{message}{suffix}")


class MissingArtifactError(CapBernError):
    """A run artifact needed by analyze/plot is missing."""

    exit_code = EXIT_MISSING_ARTIFACT


__all__ = [
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_MISSING_ARTIFACT",
    "EXIT_INTERNAL",
    "CapBernError",
    "ConfigurationError",
    "DomainError",
    "ResolutionError",
    "PreconditionError",
    "OutOfDomainError",
    "MissingArtifactError",
]
