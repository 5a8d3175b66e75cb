"""Input validation helpers for array-shaped estimator inputs."""

from __future__ import annotations

import numpy as np

from .errors import NumericsError, ShapeError


def check_feature_array(X, dtype=np.float32) -> np.ndarray:
    """Coerce features to [N, C, H, W]; [N, H, W] gains a channel axis."""
    arr = np.asarray(X)
    if arr.ndim == 3:
        arr = arr[:, None, :, :]
    if arr.ndim != 4:
        raise ShapeError(
            f"features must be [N, C, H, W] or [N, H, W], got shape {tuple(arr.shape)}"
        )
    if arr.shape[0] == 0:
        raise ShapeError("feature array is empty")
    arr = arr.astype(dtype, copy=False)
    if not np.all(np.isfinite(arr)):
        raise NumericsError("features contain NaN or Inf")
    return arr


def check_labels(y, num_samples: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ShapeError(f"labels must be 1-d, got shape {tuple(arr.shape)}")
    if arr.shape[0] != num_samples:
        raise ShapeError(f"{num_samples} samples but {arr.shape[0]} labels")
    return arr
