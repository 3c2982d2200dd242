"""Fairness-aware representation learning for heterogeneous information networks."""

__version__ = "0.1.0"
