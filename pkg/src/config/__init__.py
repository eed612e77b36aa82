"""Configuration module for the explanation disparity audit."""
