"""Input-validation helpers used across the package.

These mirror the scikit-learn ``check_array`` idiom: each helper either
returns a normalized ``numpy`` array or raises :class:`ValidationError`
with a message naming the offending quantity.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def as_float_array(values, name: str, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Coerce to a float64 array, optionally enforcing an exact shape."""
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ValidationError(f"{name}: expected shape {shape}, got {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
    return arr


def check_range(arr: np.ndarray, name: str, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    check_finite(arr, name)
    amin, amax = float(arr.min()), float(arr.max())
    if amin < lo or amax > hi:
        raise ValidationError(f"{name}: values must lie in [{lo}, {hi}], got [{amin}, {amax}]")
    return arr


def check_positive(value, name: str):
    if not value > 0:
        raise ValidationError(f"{name} must be positive, got {value}")
    return value


def check_same_shape(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str):
    if a.shape != b.shape:
        raise ValidationError(f"{name_a} shape {a.shape} does not match {name_b} shape {b.shape}")


def check_unit_norm(vec: np.ndarray, name: str, tol: float = 1e-5) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > tol:
        raise ValidationError(f"{name}: expected unit L2 norm within {tol}, got {norm}")
    return vec
