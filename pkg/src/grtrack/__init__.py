"""Memory-augmented visual tracking with relevance-pruned reference tokens."""
__version__ = "0.1.0"
