"""Matching estimators of the ATT with pooled-variance inference."""

__version__ = "0.1.0"
