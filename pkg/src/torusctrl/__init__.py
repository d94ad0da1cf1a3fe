"""Numerical laboratory for null-controllability of coupled
transport-diffusion systems on the one-dimensional torus."""

__version__ = "0.1.0"
