"""Error taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class CrossRecError(Exception):
    """Base class for all package errors."""


class ConfigError(CrossRecError):
    """Invalid or inconsistent configuration."""


class DataError(CrossRecError):
    """Malformed input data or dataset files."""


class NumericError(CrossRecError):
    """Numerical failure: non-finite values, empty softmax support, etc."""
