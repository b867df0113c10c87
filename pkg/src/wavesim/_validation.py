"""Input validation helpers shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeMismatchError


def check_image_batch(X):
    """Coerce ``X`` to a float64 ``(n, C, H, W)`` array.

    ``(n, H, W)`` input is treated as single-channel.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[:, None, :, :]
    if X.ndim != 4:
        raise ShapeMismatchError(f"expected an (n, C, H, W) image stack, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("image stack contains NaN or infinity")
    return X


def check_features(X, min_samples=1):
    return check_array(X, dtype=np.float64, ensure_min_samples=min_samples)


def check_symmetric_matrix(S, tol=1e-10, name="matrix"):
    """Return ``S`` as float64 after verifying it is square and symmetric."""
    S = check_array(S, dtype=np.float64, ensure_min_samples=1, ensure_min_features=1)
    if S.shape[0] != S.shape[1]:
        raise ValueError(f"{name} must be square, got {S.shape}")
    dev = np.max(np.abs(S - S.T)) if S.size else 0.0
    if dev > tol:
        raise ValueError(f"{name} is not symmetric (max deviation {dev:.3g})")
    return S


def check_labels(y, n):
    y = np.asarray(y)
    if y.shape != (n,):
        raise ShapeMismatchError(f"expected {n} labels, got shape {y.shape}")
    return y


def default_ids(n, ids=None):
    if ids is None:
        return [str(i) for i in range(n)]
    ids = [str(i) for i in ids]
    if len(ids) != n or len(set(ids)) != n:
        raise ValueError("ids must be unique, one per sample")
    return ids
