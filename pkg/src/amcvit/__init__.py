"""Constellation-image modulation classification with a from-scratch Vision Transformer."""

from amcvit.modem import ModulationScheme

__all__ = ["ModulationScheme"]
__version__ = "0.1.0"
