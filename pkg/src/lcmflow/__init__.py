"""Heteroscedastic Laplace-Cauchy likelihoods for two-frame optical flow."""

__version__ = "0.1.0"
