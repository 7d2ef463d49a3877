"""Entanglement-structure detection from a few global Pauli measurements."""

__version__ = "0.1.0"
