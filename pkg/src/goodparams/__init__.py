"""Good-parameter estimation for discrete-time dynamical systems."""

__version__ = "0.1.0"
