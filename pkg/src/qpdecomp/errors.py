"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, data problems with 3, numerical failures with 4.
"""


class QpdecompError(Exception):
    """Base class for all errors raised by qpdecomp."""


class ConfigError(QpdecompError):
    """Invalid configuration or parameterization."""


class DataError(QpdecompError):
    """Malformed, inconsistent, or out-of-range input data."""


class NumericalError(QpdecompError):
    """A numerical procedure failed or left its validity range."""
