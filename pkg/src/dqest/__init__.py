"""Estimation and inference for diversification quotients and ratios."""

__version__ = "0.1.0"
