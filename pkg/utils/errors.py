"""
Exceptions raised across the laboratory.

Each family maps onto one process exit code in the CLI.
"""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TOLERANCE = 3


class MadmError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ValidationError(MadmError, ValueError):
    """A precondition on parameters, contours or inputs is violated."""

    exit_code = EXIT_VALIDATION


class ToleranceError(MadmError):
    """A numerical diagnostic exceeded its threshold."""

    exit_code = EXIT_TOLERANCE

    def __init__(self, message, value=None, threshold=None):
        super().__init__(message)
        self.value = value
        self.threshold = threshold


class WindowLeakError(ToleranceError):
    """Probability mass escaped the truncated lattice window."""


class RunawayError(MadmError):
    """A simulation replica exceeded the event-count guard."""

    exit_code = EXIT_TOLERANCE
