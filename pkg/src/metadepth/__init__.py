"""Meta-initialization for single-image depth regression."""

__version__ = "0.1.0"
