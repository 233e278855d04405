"""Dissimilarity-augmented active learning for graph node classification."""

__version__ = "0.1.0"
