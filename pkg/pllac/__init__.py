"""Partial-label learning with augmented classes."""

__version__ = "0.1.0"
