"""Simulation and verification tools for the Poisson random connection model."""

__version__ = "0.1.0"
