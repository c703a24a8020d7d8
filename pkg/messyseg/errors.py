"""
Error types for messyseg
Every error carries the process exit code the command line reports for it
"""

from typing import Optional


class MessysegError(Exception):
    """Base class for all errors raised by the toolkit"""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class UsageError(MessysegError, ValueError):
    """Invalid arguments or shapes handed to an operation"""

    exit_code = 2


class DataError(MessysegError):
    """Malformed or inconsistent input data"""

    exit_code = 2

    def __init__(self, detail: str, line_number: Optional[int] = None):
        if line_number is not None:
            detail = f"line {line_number}: {detail}"
        super().__init__(detail)
        self.line_number = line_number


class CheckpointError(DataError):
    """Corrupt, truncated or incompatible checkpoint file"""

    def __init__(self, detail: str, location: Optional[str] = None):
        if location is not None:
            detail = f"{detail} (at {location})"
        super().__init__(detail)
        self.location = location


class TrainingError(MessysegError):
    """Numeric failure during training (non-finite loss or gradient)"""

    exit_code = 3
