"""Training optimal decision diagrams with mixed-integer programming."""

__version__ = "0.1.0"
