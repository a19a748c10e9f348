"""Numerical laboratory for orbital free entropy at finite matrix size."""

__version__ = "0.1.0"
