"""Quantum filtering and risk-sensitive estimation for a two-level atom."""

__version__ = "0.1.0"
