"""Numerical checks of the stochastic small-gain theorem for additive-noise SDEs."""

__version__ = "0.1.0"
