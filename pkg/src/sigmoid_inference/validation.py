"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .systems import validate_grid

__all__ = ["check_params", "check_observations", "check_times"]


def check_params(X, d_p: int) -> np.ndarray:
    """Coerce ``X`` to a finite float array of shape (n, d_p)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != d_p:
        raise ValueError(f"expected {d_p} parameters per row, got {X.shape[1]}")
    return X


def check_observations(Y, flat_dim: int | None = None, min_rows: int = 2) -> np.ndarray:
    """Replicate matrix (N_o, flat_dim) with at least ``min_rows`` rows."""
    Y = check_array(Y, dtype=np.float64, ensure_min_samples=min_rows)
    if flat_dim is not None and Y.shape[1] != flat_dim:
        raise ValueError(f"expected {flat_dim} observed entries per replicate, got {Y.shape[1]}")
    return Y


def check_times(times, horizon: float) -> np.ndarray:
    return validate_grid(times, horizon)
