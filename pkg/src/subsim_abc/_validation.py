"""Small input-validation helpers shared across modules."""
from __future__ import annotations

import numpy as np

NORMS = ("L2", "Linf")


def as_finite_vector(x, name: str = "x") -> np.ndarray:
    arr = np.array(x, dtype=float).reshape(-1) if np.ndim(x) else np.array([x], dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must contain only finite values")
    return arr


def check_norm(norm: str) -> str:
    if norm not in NORMS:
        raise ValueError(f"unknown norm {norm!r}; expected one of {NORMS}")
    return norm


def check_same_length(a, b, what: str = "vectors") -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what} differ in length: {np.shape(a)} vs {np.shape(b)}")


def check_positive(value, name: str) -> float:
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value
