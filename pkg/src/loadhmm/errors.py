"""Exception types shared across the package.

Each maps onto a CLI exit code (see :mod:`loadhmm.cli`).
"""


class LoadHMMError(Exception):
    exit_code = 1


class ConfigError(LoadHMMError, ValueError):
    exit_code = 2


class DataError(LoadHMMError, ValueError):
    exit_code = 3


class NumericalError(LoadHMMError, ArithmeticError):
    exit_code = 4


class NotPositiveDefiniteError(NumericalError):
    """Raised when a matrix cannot be Cholesky-factored, even after jitter."""
