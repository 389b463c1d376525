"""Numerical experiments for fractional Sobolev spaces on closed manifolds."""

__version__ = "0.1.0"
