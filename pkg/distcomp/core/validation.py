"""
Error types and argument validation shared by every distcomp module.
"""
from typing import Any, Optional, Sequence
import logging

import numpy as np

logger = logging.getLogger(__name__)


class DistCompError(Exception):
    """Base class of all distcomp errors."""
    pass


class InvalidInput(DistCompError, ValueError):
    """An argument violates a stated precondition or type invariant."""
    pass


class AssumptionViolated(DistCompError):
    """A modelling assumption required by the requested computation fails."""
    pass


class NumericalFailure(DistCompError):
    """A quadrature or Monte Carlo estimate did not reach its accuracy target."""
    pass


class NoConvergence(DistCompError):
    """An iterative solve stopped before its certificate met the tolerance.

    The best iterate and its KKT report travel with the error so callers can still
    write artifacts.
    """

    def __init__(self, message: str, result: Any = None, report: Any = None):
        super().__init__(message)
        self.result = result
        self.report = report


def check_unit_interval(value: float, name: str) -> float:
    """
    Validate that a scalar lies in [0, 1].

    Raises:
        InvalidInput: If the value is not finite or outside [0, 1]
    """
    if not np.isfinite(value) or value < 0.0 or value > 1.0:
        raise InvalidInput(f"{name} must lie in [0, 1], got {value}")
    return float(value)


def check_positive(value: float, name: str, strict: bool = True) -> float:
    if not np.isfinite(value) or value < 0.0 or (strict and value == 0.0):
        bound = "> 0" if strict else ">= 0"
        raise InvalidInput(f"{name} must be {bound}, got {value}")
    return float(value)


def check_probability_vector(weights: Sequence[float], name: str = "weights", atol: float = 1e-12) -> np.ndarray:
    """
    Validate nonnegative weights summing to one.

    Returns:
        The weights as a float array

    Raises:
        InvalidInput: On negative entries or a total mass off one by more than atol
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidInput(f"{name} must be a nonempty vector")
    if not np.all(np.isfinite(w)):
        raise InvalidInput(f"{name} contains non-finite entries")
    if np.any(w < 0.0):
        raise InvalidInput(f"{name} must be nonnegative (min {w.min():.3e})")
    total = w.sum()
    if abs(total - 1.0) > atol:
        raise InvalidInput(f"{name} must sum to 1 within {atol:g}, got {total:.15g}")
    return w


def check_same_length(a: Sequence, b: Sequence, what: str, expected: Optional[int] = None) -> int:
    if len(a) != len(b):
        raise InvalidInput(f"{what}: length mismatch ({len(a)} vs {len(b)})")
    if expected is not None and len(a) != expected:
        raise InvalidInput(f"{what}: expected length {expected}, got {len(a)}")
    return len(a)
