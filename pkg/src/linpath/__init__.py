"""Deterministic dense-network training and linear-path loss probing."""

__version__ = "0.1.0"
