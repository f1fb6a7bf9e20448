"""Particle simulation and stability experiments for mean-field functional SDEs with common noise."""

__version__ = "0.1.0"
