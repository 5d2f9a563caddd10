"""Detect context-dependent changes in neural population codes by cross-context decoding."""

__version__ = "0.1.0"
