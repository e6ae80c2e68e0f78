"""Adaptive software diversity for fault recovery on a simulated NMR multi-core."""

__version__ = "0.1.0"
