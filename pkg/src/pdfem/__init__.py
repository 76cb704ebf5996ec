"""Phantom domain finite elements on structured grids."""

__version__ = "0.1.0"
