"""Symbolic generation, assembly and Newton solution of interior-penalty DG forms."""

__version__ = "0.1.0"
