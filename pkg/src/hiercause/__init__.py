"""Latent-hierarchy causal discovery from observational samples."""

__version__ = "0.1.0"
