"""Positivity-preserving explicit Euler schemes for the Aït-Sahalia model with Poisson jumps."""

__version__ = "0.1.0"
