"""Ultrasound speckle simulation and scatterer-representation estimation."""

__version__ = "0.1.0"
