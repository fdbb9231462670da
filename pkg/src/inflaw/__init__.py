"""Inference-efficient scaling laws for architecture selection."""

__version__ = "0.1.0"
