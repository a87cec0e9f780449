"""Supervised face clustering by context-enhanced linkage prediction."""

__version__ = "0.1.0"
