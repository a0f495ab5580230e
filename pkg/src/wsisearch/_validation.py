"""Input validation helpers shared by the estimators and functional API."""

from __future__ import annotations

import math

import numpy as np

from .exceptions import EmptyInputError


def check_embedding_matrix(X, *, allow_empty: bool = False) -> np.ndarray:
    """Coerce ``X`` to a finite 2-D float64 array of shape (n_samples, dim).

    A single vector is promoted to one row. Distance arithmetic is done in
    64-bit regardless of the storage precision of the input.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D embedding matrix, got ndim={X.ndim}")
    if X.shape[1] < 1:
        raise ValueError("embeddings must have dimension >= 1")
    if X.shape[0] == 0 and not allow_empty:
        raise EmptyInputError("embedding matrix has no rows")
    if not np.all(np.isfinite(X)):
        raise ValueError("embedding matrix contains non-finite values")
    return X


def check_vector(v, *, dim: int | None = None) -> np.ndarray:
    """Coerce ``v`` to a finite 1-D float64 vector, optionally of length ``dim``."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size < 1:
        raise ValueError("expected a non-empty vector")
    if dim is not None and v.size != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite values")
    return v


def check_seed(seed) -> int:
    """Validate a non-negative integer seed (u64 range)."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return seed


def round_half_away(x: float) -> int:
    """Round to the nearest integer, halves away from zero.

    Python's built-in ``round`` is banker's rounding; a fixed tie rule is
    required for cross-run determinism of integer distance keys.
    """
    if x >= 0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))
