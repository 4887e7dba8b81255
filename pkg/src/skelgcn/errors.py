"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data/config
problems exit 2, numerical failures exit 3.
"""


class SkelGcnError(Exception):
    """Base class for package errors."""


class ShapeError(SkelGcnError, ValueError):
    """Tensor or matrix dimensions do not line up."""


class ConfigError(SkelGcnError, ValueError):
    """Invalid configuration value, topology, or layer hyperparameter."""


class DataError(SkelGcnError, ValueError):
    """Malformed input data (parse failures, inconsistent dimensions)."""


class CheckpointError(SkelGcnError, ValueError):
    """Unreadable, corrupt, or mismatching checkpoint file."""


class NumericalError(SkelGcnError, RuntimeError):
    """Non-finite values or a failed numerical check during a run."""
