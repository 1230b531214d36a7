"""Gyroscopic passivity-based integral control for fully actuated mechanical systems."""

__version__ = "0.1.0"
