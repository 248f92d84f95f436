"""Bayesian identification of ODE systems with Gaussian-process likelihoods."""
__version__ = "0.1.0"
