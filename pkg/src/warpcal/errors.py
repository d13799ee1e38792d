"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems -> 2,
data/file problems -> 3, numerical failures -> 4.
"""


class ConfigurationError(ValueError):
    """Invalid configuration: bad grid, inconsistent model sizes, unknown keys."""


class DataError(ValueError):
    """Malformed or missing input data (files, observation sets)."""


class NumericalError(RuntimeError):
    """A numerical operation failed in a way that cannot be recovered."""
