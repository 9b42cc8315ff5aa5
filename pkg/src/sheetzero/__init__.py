"""Simulation and measurement of Brownian-sheet zero sets."""

__version__ = "0.1.0"
