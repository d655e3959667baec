"""Grounding natural-language commands to UI elements and probing the learned pair representations for spatial features."""

__version__ = "0.1.0"
