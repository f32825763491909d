"""Efficient doubly robust difference-in-differences estimation."""

__version__ = "0.1.0"
