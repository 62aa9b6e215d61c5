"""Semantic radiance fields for hand-object reconstruction from a single view."""

__version__ = "0.1.0"
