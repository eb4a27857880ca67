"""Graph-based semi-supervised learning with large-dimensional corrections."""

__version__ = "0.1.0"
