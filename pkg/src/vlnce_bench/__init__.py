"""Deterministic desk-scale VLN-CE navigation benchmark."""

__version__ = "0.1.0"
