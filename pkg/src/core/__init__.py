"""Core modules: data generation, black boxes, explanations, metrics and experiments."""
