"""Two-stage exact optimization of retrieval plans for composed image retrieval."""

__version__ = "0.1.0"
