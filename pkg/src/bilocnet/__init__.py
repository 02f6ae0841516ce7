"""Bilocality network predictions and desk-scale simulation of a three-node photonic experiment."""

__version__ = "0.1.0"
