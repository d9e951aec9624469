"""Dual Poincare-ball multimodal training stack."""

__version__ = "0.1.0"
