"""Optimal transport by training one space-time potential on the implicit Hamilton-Jacobi loss."""

__version__ = "0.1.0"
