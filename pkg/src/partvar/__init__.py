"""Variance estimators for the concentration of particulate material samples."""
__version__ = "0.1.0"
