"""Contextual token-embedding sidecar exporter."""

__version__ = "0.1.0"
