"""Numerical laboratory for the eps^(2/3) rigidity rate of Poisson brackets."""

__version__ = "0.1.0"
