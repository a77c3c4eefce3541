"""Transformer-encoder classification of multivariate accident-scenario time series."""

__version__ = "0.1.0"
