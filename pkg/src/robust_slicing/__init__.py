"""Robust online admission control and resource allocation for network slices."""
__version__ = "0.1.0"
