"""Harmonic power flow for three-phase grids with converter-interfaced resources."""

__version__ = "0.1.0"
