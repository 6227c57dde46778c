"""Spectral computations for high-contrast periodic media with a compact defect."""

__version__ = "0.1.0"
