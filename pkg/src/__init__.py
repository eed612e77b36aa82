"""
xdaudit

Audits LIME explanations for group-wise fidelity disparities: controlled
synthetic data-generating processes, black-box classifiers, a LIME
explainer, fidelity-gap metrics and sweeps over the UCI Adult dataset.
"""

__version__ = "1.0.0"
__author__ = "xdaudit developers"
