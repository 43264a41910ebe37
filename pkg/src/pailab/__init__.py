"""Pruning-at-initialization laboratory with a learned surviving-score criterion."""

__version__ = "0.1.0"
