"""
Validation utilities for specifications and tabular data.
"""

import logging
import math
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from utils.errors import ConfigurationError, SchemaError


def check_finite(field: str, value: Any) -> float:
    """Return ``value`` as float, raising if it is not a finite number."""
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(field, f"expected a number, got {value!r}")
    if not math.isfinite(number):
        raise ConfigurationError(field, f"must be finite, got {value!r}")
    return number


def check_positive(field: str, value: Any, allow_zero: bool = False) -> float:
    """Validate a positive (or non-negative) number."""
    number = check_finite(field, value)
    if number < 0 or (number == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ConfigurationError(field, f"must be {bound}, got {value!r}")
    return number


def check_int_at_least(field: str, value: Any, minimum: int) -> int:
    """Validate an integer with a lower bound."""
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigurationError(field, f"expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigurationError(field, f"must be >= {minimum}, got {value}")
    return int(value)


def check_fraction(field: str, value: Any, low_open: float = 0.0, high: float = 1.0,
                   high_inclusive: bool = True) -> float:
    """Validate ``low_open < value <= high`` (or ``< high``)."""
    number = check_finite(field, value)
    upper_ok = number <= high if high_inclusive else number < high
    if not (number > low_open and upper_ok):
        closing = "]" if high_inclusive else ")"
        raise ConfigurationError(field, f"must lie in ({low_open}, {high}{closing}, got {value!r}")
    return number


def check_choice(field: str, value: Any, choices: Iterable[Any]) -> Any:
    """Validate membership in a fixed set."""
    options = list(choices)
    if value not in options:
        raise ConfigurationError(field, f"must be one of {options}, got {value!r}")
    return value


class DataValidator:
    """Validator for tabular dataset arrays."""

    def __init__(self):
        """Initialize the validator."""
        self.logger = logging.getLogger(__name__)

    @staticmethod
    def is_binary(values: np.ndarray) -> bool:
        """True when every value is exactly 0 or 1."""
        values = np.asarray(values)
        return bool(np.all((values == 0) | (values == 1)))

    def validate_dataset(self, names: Sequence[str], kinds: Sequence[str], X: np.ndarray,
                         y: np.ndarray, sensitive: np.ndarray) -> None:
        """
        Validate the arrays backing a dataset.

        Args:
            names: Column names in matrix order
            kinds: Column kinds ("continuous" or "binary")
            X: Feature matrix
            y: Label vector
            sensitive: Sensitive-attribute vector

        Raises:
            SchemaError: Shape or naming problems
            ConfigurationError: Non-binary values where binary are required
        """
        if X.ndim != 2:
            raise SchemaError(f"feature matrix must be 2-D, got shape {X.shape}")
        if X.shape[1] != len(names):
            raise SchemaError(f"{len(names)} column names for {X.shape[1]} matrix columns")
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {list(names)}")
        if len(y) != X.shape[0] or len(sensitive) != X.shape[0]:
            raise SchemaError(
                f"row count mismatch: X has {X.shape[0]}, y has {len(y)}, sensitive has {len(sensitive)}"
            )
        for name, kind in zip(names, kinds):
            check_choice(f"columns[{name}].kind", kind, ("continuous", "binary"))
        binary_idx = [j for j, kind in enumerate(kinds) if kind == "binary"]
        if binary_idx and not self.is_binary(X[:, binary_idx]):
            bad = [names[j] for j in binary_idx if not self.is_binary(X[:, j])]
            raise ConfigurationError("X", f"binary columns contain values outside {{0,1}}: {bad}")
        if not self.is_binary(y):
            raise ConfigurationError("y", "labels must be 0/1")
        if not self.is_binary(sensitive):
            raise ConfigurationError("sensitive", "sensitive attribute must be 0/1")

    def require_columns(self, available: Sequence[str], required: Iterable[str],
                        context: Optional[str] = None) -> None:
        """Raise SchemaError listing any required column that is absent."""
        missing = [name for name in required if name not in set(available)]
        if missing:
            where = f" for {context}" if context else ""
            raise SchemaError(f"missing columns{where}: {missing}")
