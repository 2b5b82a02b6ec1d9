"""Invariance-based causal representation learning on synthetic SCMs."""

__version__ = "0.1.0"
