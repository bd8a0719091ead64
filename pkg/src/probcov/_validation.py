"""Input validation helpers shared across estimators and free functions."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.exceptions import NotFittedError

__all__ = [
    "check_matrix",
    "check_vector",
    "check_matching_lengths",
    "check_fitted",
    "check_probability",
    "check_in_closed",
    "as_query_matrix",
]


def check_matrix(X, name="X", min_rows=1):
    """Coerce ``X`` to a C-contiguous float64 2-D array and validate it.

    Rejects NaN/inf entries and arrays with fewer than ``min_rows`` rows.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, got {X.shape[0]}")
    if X.shape[1] < 1:
        raise ValueError(f"{name} needs at least one column")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_vector(y, name="y", min_len=1, finite=True):
    """Coerce ``y`` to a contiguous float64 1-D array and validate it."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {y.shape}")
    if y.shape[0] < min_len:
        raise ValueError(f"{name} needs at least {min_len} entries, got {y.shape[0]}")
    if finite and not np.all(np.isfinite(y)):
        raise ValueError(f"{name} contains non-finite values")
    return y


def check_matching_lengths(X, y, x_name="X", y_name="y"):
    if X.shape[0] != y.shape[0]:
        raise ValueError(
            f"{x_name} and {y_name} disagree on sample count: "
            f"{X.shape[0]} vs {y.shape[0]}"
        )


def check_fitted(estimator, attribute):
    """Raise ``NotFittedError`` unless ``estimator`` carries ``attribute``."""
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit() first"
        )


def check_probability(value, name="probability"):
    """Validate a scalar or array of probabilities in [0, 1]."""
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def check_in_closed(value, lo, hi, name="value"):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite number")
    if not (lo <= value <= hi):
        raise ValueError(f"{name} must lie in [{lo}, {hi}], got {value}")
    return float(value)


def as_query_matrix(X, n_features, name="X"):
    """Validate query rows against the fitted feature count.

    Accepts a single feature vector or a matrix; always returns a matrix.
    """
    X = check_matrix(X, name=name)
    if X.shape[1] != n_features:
        raise ValueError(
            f"{name} has {X.shape[1]} features, estimator was fitted with {n_features}"
        )
    return X
