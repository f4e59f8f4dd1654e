"""Offline contextual-vector cache exporter for the hrlt triplet engine."""

__version__ = "0.1.0"
