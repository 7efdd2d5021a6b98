"""Exact transfer-matrix laboratory for directed polymers in random environment."""

__version__ = "0.1.0"
