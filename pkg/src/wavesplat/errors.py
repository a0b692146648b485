"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError (and subclasses) -> 3, NumericalDivergenceError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration file, key, value, or violated config invariant."""


class DataError(ValueError):
    """Malformed, missing, or inconsistent input data."""


class ImageFormatError(DataError):
    """Malformed or unsupported Netpbm / binary-plane payload."""


class CoverageInfeasibleError(DataError):
    """Requested mask coverage cannot be met at the object's pixel granularity."""


class NumericalDivergenceError(RuntimeError):
    """Optimization produced a non-finite loss or parameter."""
