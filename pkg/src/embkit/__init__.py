"""Dimensional-redundancy analysis of text-embedding matrices."""

__version__ = "0.1.0"
