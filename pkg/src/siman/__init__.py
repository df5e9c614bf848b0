"""Self-supervised scene-text representation learning with similarity-aware normalization."""

__version__ = "0.1.0"
