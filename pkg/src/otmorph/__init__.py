"""Time-continuous optimal mass transport between two grayscale densities."""

__version__ = "0.1.0"
