"""Boundary-integral solvers for nonlinear harmonic transmission problems on planar annuli."""

__version__ = "0.1.0"
