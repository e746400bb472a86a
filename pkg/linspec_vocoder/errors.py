"""Exception hierarchy shared by the library and the CLI exit-code contract."""


class LinspecError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(LinspecError, ValueError):
    """Invalid or inconsistent configuration."""

    exit_code = 1


class UsageError(LinspecError):
    """Bad command-line usage (unknown stage, missing argument)."""

    exit_code = 1


class DataError(LinspecError):
    """Input data missing, unreadable or unusable."""

    exit_code = 2


class DegenerateCorpusError(DataError):
    """Corpus statistics cannot be computed (empty split, zero variance)."""


class StaleCacheError(DataError):
    """Feature cache written under a different spectral configuration."""


class CheckpointMismatchError(DataError):
    """Checkpoint was produced under a configuration that differs from the active one."""

    def __init__(self, message: str, differences=None):
        super().__init__(message)
        self.differences = differences or []


class DivergenceError(LinspecError):
    """Training produced a non-finite loss."""

    exit_code = 3
