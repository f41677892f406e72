"""Causal forests with fixed effects for staggered-adoption panels."""

__version__ = "0.3.0"
