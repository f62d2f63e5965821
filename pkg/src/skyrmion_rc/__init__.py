"""Simulated skyrmion-film reservoir computing workbench."""

__version__ = "0.1.0"
