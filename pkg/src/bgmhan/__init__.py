"""Hierarchical gated-attention profile classifier and the
shortlist-analyze-recommend workflow built on top of it."""

__version__ = "0.1.0"
