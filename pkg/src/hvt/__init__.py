"""Hyperbolic vision transformer on a numpy reverse-mode autodiff engine."""

__version__ = "0.1.0"
