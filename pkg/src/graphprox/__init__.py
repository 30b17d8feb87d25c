"""Graph-level embeddings that preserve graph edit distance proximity."""

__version__ = "0.1.0"
