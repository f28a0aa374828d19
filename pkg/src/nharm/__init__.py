"""Numerical laboratory for free-boundary n-harmonic maps of prescribed degree."""

__version__ = "0.1.0"
