"""Capacity scaling simulator for fractal wireless networks with social contacts."""

__version__ = "0.1.0"
