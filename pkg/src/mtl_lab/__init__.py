"""Desk-scale multi-task latent regression lab."""

__version__ = "0.1.0"
