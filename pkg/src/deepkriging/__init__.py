"""Single-image super-resolution by supervised kriging."""

__version__ = "0.1.0"
