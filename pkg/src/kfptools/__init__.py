"""Kinetic flux profiling models: compilation, identifiability, simulation and Bayesian fitting."""

__version__ = "0.1.0"
