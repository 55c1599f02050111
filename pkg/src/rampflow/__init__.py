"""Ramp-flow estimation from mainline loop-detector data."""

__version__ = "0.1.0"
