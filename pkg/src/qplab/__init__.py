"""Numerical laboratory for long-range quasi-periodic operators with singular potentials."""

__version__ = "0.1.0"
