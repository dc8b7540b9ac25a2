"""Hybrid SDE risk processes with level-dependent switching."""

__version__ = "0.1.0"
