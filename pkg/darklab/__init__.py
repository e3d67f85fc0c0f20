"""Dark modes in non-Markovian linear quantum systems."""

__version__ = "0.1.0"
