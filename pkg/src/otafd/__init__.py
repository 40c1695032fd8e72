"""Differentially private over-the-air federated distillation."""

__version__ = "0.1.0"
