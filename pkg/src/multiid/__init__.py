"""multiid: dataset construction and evaluation engine for multi-identity
image generation."""

__version__ = "0.1.0"
