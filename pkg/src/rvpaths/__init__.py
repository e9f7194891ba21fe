"""Simulation and Monte Carlo checks for regularly varying continuous-time processes."""

__version__ = "0.1.0"
