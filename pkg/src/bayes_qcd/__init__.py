"""Bayesian quickest change detection under a global false alarm constraint."""

__version__ = "0.1.0"
