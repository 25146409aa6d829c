"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigurationError -> 1,
SimulationFailed -> 2, NumericalError -> 3.
"""


class DsinvError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DsinvError):
    """Invalid configuration, inputs, or file contents."""


class SimulationFailed(DsinvError):
    """The pressure solver produced a non-finite or unusable state."""


class NumericalError(DsinvError):
    """A linear-algebra operation failed (factorisation, eigensolve, ...)."""
