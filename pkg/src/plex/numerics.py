"""Dense linear-algebra and activation kernels used by every other module.

All core math runs in float64. Arrays are validated to be finite at the
boundary (``as_vector`` / ``as_matrix``); the kernels themselves assume
validated inputs and are pure, so they are safe to call concurrently.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateVectorError, ShapeError

# Norms below this are treated as degenerate rather than divided by.
NORM_EPS = 1e-12


def as_vector(data) -> np.ndarray:
    """Validate and return a finite 1-D float64 array."""
    v = np.asarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains NaN or Inf")
    return v


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate and return a finite 2-D float64 array, optionally checking shape."""
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains NaN or Inf")
    return m


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product with shape checking."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"cannot multiply {m.shape} by {v.shape}")
    return m @ v


def softmax(v: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max-subtraction before exponentiation)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of empty input")
    shifted = v - np.max(v)
    e = np.exp(shifted)
    return e / np.sum(e)


def relu(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0.0)


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding.

    Raises DegenerateVectorError for (near-)zero norms instead of
    silently returning 0.
    """
    if a.shape != b.shape:
        raise ShapeError(f"cosine_sim shapes differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < NORM_EPS or nb < NORM_EPS:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    if np.array_equal(a, b):
        return 1.0  # identical vectors: exactly aligned, no rounding
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def euclidean(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between equal-length vectors."""
    if a.shape != b.shape:
        raise ShapeError(f"euclidean shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))
