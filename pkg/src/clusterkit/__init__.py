"""Columnar table engine with online re-clustering and a clustering advisor."""

__version__ = "0.1.0"
