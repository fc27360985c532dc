"""Multiscale gradient flows for hierarchical convex minimization."""
__version__ = "0.1.0"
