"""Unbiased collaborative filtering from implicit feedback with fair sampling."""

__version__ = "0.1.0"
