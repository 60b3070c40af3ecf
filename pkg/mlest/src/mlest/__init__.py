"""Boosted-tree and convolutional estimators over exported trajectory data."""

__version__ = "0.1.0"
