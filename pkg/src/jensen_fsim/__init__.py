"""Jensen Effect tests for single index and functional single index models."""

__version__ = "0.1.0"
