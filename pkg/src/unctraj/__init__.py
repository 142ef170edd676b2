"""Uncertainty-aware vectorized map estimation and trajectory forecasting, at toy scale."""

__version__ = "0.1.0"
