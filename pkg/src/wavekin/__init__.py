"""Truncated stochastic KP three-wave lattice and its linearized kinetic limit."""

__version__ = "0.1.0"
