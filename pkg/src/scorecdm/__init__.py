"""Diffusion-based imputation of multivariate time series with score-weighted
convolutional mixing."""

__version__ = "0.1.0"
