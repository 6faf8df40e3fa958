"""Continuous-discrete nonlinear filtering with a Gaussian-network EKF update."""

__version__ = "0.1.0"
