"""Synthetic diagram captioning corpora, answer keys and scoring."""

__version__ = "0.1.0"
