"""Exact construction of compact sets with injective projections onto prescribed lines."""

__version__ = "0.1.0"
