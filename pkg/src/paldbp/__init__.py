"""Learned digital back-propagation with perturbation-aided nonlinear steps."""
__version__ = "0.1.0"
