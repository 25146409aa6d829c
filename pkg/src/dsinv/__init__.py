"""Data space inversion for direct reservoir forecasting.

Estimates the posterior predictive distribution of well pressures by
Gaussian conditioning of a prior simulation ensemble on observed data,
alongside MAP-linearisation and preconditioned Crank-Nicolson MCMC
baselines, on a 2D single-phase reservoir benchmark.
"""

from .errors import ConfigurationError, DsinvError, NumericalError, SimulationFailed
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DsinvError",
    "NumericalError",
    "SimulationFailed",
    "KERNEL_BACKEND",
    "__version__",
]
