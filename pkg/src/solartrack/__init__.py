"""Solar event tracking with deep regression networks."""

__version__ = "0.1.0"
