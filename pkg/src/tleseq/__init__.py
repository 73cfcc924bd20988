"""Sequence prediction trained by regressing per-token edit-distance decompositions."""

__version__ = "0.1.0"
