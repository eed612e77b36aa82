"""
Exception types raised by the fidelity audit toolkit.

Each error also derives from the closest builtin so callers that only know
about ``ValueError`` / ``KeyError`` keep working.
"""

from typing import Dict, Iterable, Optional


class XdauditError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(XdauditError, ValueError):
    """Invalid configuration or specification value."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class SamplingError(XdauditError, ValueError):
    """A sampling intervention cannot be satisfied with the available rows."""

    def __init__(self, message: str, counts: Optional[Dict[int, int]] = None):
        self.counts = dict(counts or {})
        if self.counts:
            message = f"{message} (group counts: {self.counts})"
        super().__init__(message)


class SchemaError(XdauditError, KeyError):
    """Missing column or unknown category."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class NumericalFailure(XdauditError, ArithmeticError):
    """Non-finite loss during training."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")


class ModelFileError(XdauditError, ValueError):
    """Malformed model file."""

    def __init__(self, message: str, offset: int = 0):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class IncompatibleVersionError(ModelFileError):
    """Model file written by an unsupported format version."""

    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(f"model file version {found!r} is not supported (expected {expected})")


class MetricError(XdauditError, ValueError):
    """Fidelity metric cannot be computed for the given records."""

    def __init__(self, message: str, group_sizes: Optional[Dict[int, int]] = None):
        self.group_sizes = dict(group_sizes or {})
        if self.group_sizes:
            message = f"{message} (group sizes: {self.group_sizes})"
        super().__init__(message)


class FitError(XdauditError, RuntimeError):
    """Iterative statistical fit did not converge."""

    def __init__(self, message: str, gradient_norm: float):
        self.gradient_norm = gradient_norm
        super().__init__(f"{message} (final gradient norm {gradient_norm:.3e})")


class DataIntegrityError(XdauditError, ValueError):
    """Raw input file does not have the expected structure."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"{message} at line {line}"
        super().__init__(message)


class BatchExplanationError(XdauditError, RuntimeError):
    """One or more instances of a batch could not be explained."""

    def __init__(self, failures: Dict[int, BaseException]):
        self.failures = dict(failures)
        indices = ", ".join(str(i) for i in sorted(self.failures))
        first = next(iter(self.failures.values())) if self.failures else None
        super().__init__(f"explanation failed for instance indices [{indices}]: {first}")

    @property
    def indices(self) -> Iterable[int]:
        return sorted(self.failures)
