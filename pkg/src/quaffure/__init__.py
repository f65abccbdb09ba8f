"""Strand-based quasi-static hair draping with a self-supervised neural decoder."""

__version__ = "0.1.0"
