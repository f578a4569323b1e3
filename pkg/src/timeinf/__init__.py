"""Influence-based data attribution for autoregressive time-series models."""

__version__ = "0.1.0"
