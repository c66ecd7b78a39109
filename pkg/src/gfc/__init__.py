"""Generating-family calculus for exact curves on cotangent charts and
surfaces assembled from ribbon graphs."""

__version__ = "0.1.0"
