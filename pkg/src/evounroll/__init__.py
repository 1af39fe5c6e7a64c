"""Unrolled KM evolutionary optimizer toolkit."""

__version__ = "0.1.0"
