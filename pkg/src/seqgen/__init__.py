"""Generalized sequence generation for undirected (masked) sequence models."""

__version__ = "0.1.0"
