"""Exact simulation of qubit arrays in 1D baths using superspin symmetry."""

__version__ = "0.1.0"
