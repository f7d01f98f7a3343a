"""Hawkes-process analysis of limit order book event streams."""
__version__ = "0.1.0"
