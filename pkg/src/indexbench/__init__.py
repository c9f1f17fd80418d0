"""Ordered-index benchmark harness with top-down cycle accounting."""

__version__ = "0.1.0"
