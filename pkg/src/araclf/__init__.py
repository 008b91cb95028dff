"""Adversary-aware Bayesian classification toolkit."""

__version__ = "0.1.0"
