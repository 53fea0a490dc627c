"""Coil-failure prediction from image-feature time series."""
__version__ = "0.1.0"
