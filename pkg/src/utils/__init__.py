"""Utility modules for the explanation disparity audit."""
