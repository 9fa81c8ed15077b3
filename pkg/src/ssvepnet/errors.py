"""Exception hierarchy shared by every subsystem.

Each family maps onto one CLI exit code (see ``harness.cli``).
"""


class SsvepError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(SsvepError, ValueError):
    """Invalid parameters, specs or grid definitions."""

    exit_code = 2


class DataIntegrityError(SsvepError):
    """Corrupt archives, shape mismatches, leakage between train and test."""

    exit_code = 3


class NumericalError(SsvepError, ArithmeticError):
    """Non-convergence, singular matrices, NaN/Inf in tensors."""

    exit_code = 4


class StateError(SsvepError, RuntimeError):
    """An object was used before it was ready (e.g. batch norm in eval mode
    with no running statistics)."""

    exit_code = 4
