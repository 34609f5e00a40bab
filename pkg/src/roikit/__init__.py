"""Importance-map driven macroblock rate control toolkit."""

__version__ = "0.1.0"
