"""Multi-label movie-genre identification from poster images."""

__version__ = "0.1.0"
