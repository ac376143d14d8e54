"""Exception hierarchy shared across the toolkit.

Each class maps to a CLI exit code (see cli.main).
"""


class CrossflowError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigurationError(CrossflowError):
    """Bad config, missing file, invalid option combination."""

    exit_code = 2


class DataError(CrossflowError):
    """Degenerate or unusable input data."""

    exit_code = 3


class NumericError(CrossflowError):
    """Non-finite values encountered during computation."""

    exit_code = 4


class IncompatibleArchitecture(ConfigurationError):
    """Source and target networks do not share a hidden architecture."""
