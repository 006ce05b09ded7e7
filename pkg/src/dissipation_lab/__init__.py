"""Numerical toolkit for dissipation enhancement by stochastic shear transport noise."""

__version__ = "0.1.0"

__all__ = ["__version__"]
