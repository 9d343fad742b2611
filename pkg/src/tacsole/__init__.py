"""Tactile-foot perception and balance toolkit."""
__version__ = "0.1.0"
