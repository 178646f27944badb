"""Numerical laboratory for drift-penalized Brownian functionals."""

__version__ = "0.1.0"
