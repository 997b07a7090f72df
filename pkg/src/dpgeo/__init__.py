"""Numerical experiments on d_p distances of degenerating Riemannian metrics."""

__version__ = "0.1.0"
