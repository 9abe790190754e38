"""Exception types shared across the package.

Each maps to a process exit code in the command line front end, so the
hierarchy stays flat and deliberately small.
"""


class SoftSedError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(SoftSedError):
    """Invalid, inconsistent, or missing configuration."""

    exit_code = 2


class DataError(SoftSedError):
    """Malformed or missing input data (audio, annotations, caches)."""

    exit_code = 3


class NumericError(SoftSedError):
    """Non-finite values or numerically invalid state."""

    exit_code = 4
