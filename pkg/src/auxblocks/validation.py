"""Input validation helpers for the estimator facade."""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np


def as_image_batch(X, input_shape: Optional[Tuple[int, int, int]] = None) -> np.ndarray:
    """Coerce X to a float32 (N, C, H, W) batch in [0, 1].

    2-D input is reshaped using ``input_shape`` when given, otherwise as
    single-channel square images when the width is a perfect square.
    """
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 2:
        if input_shape is not None:
            X = X.reshape((len(X),) + tuple(input_shape))
        else:
            side = int(np.sqrt(X.shape[1]))
            if side * side != X.shape[1]:
                raise ValueError(
                    f"cannot infer image shape from {X.shape[1]} features; pass input_shape")
            X = X.reshape(len(X), 1, side, side)
    elif X.ndim == 3:
        X = X[:, None]
    elif X.ndim != 4:
        raise ValueError(f"expected 2D, 3D, or 4D input, got ndim={X.ndim}")
    if not np.isfinite(X).all():
        raise ValueError("input contains NaN or Inf")
    if X.min() < -1e-6 or X.max() > 1 + 1e-6:
        raise ValueError("pixel values must lie in [0, 1]; rescale before fitting")
    return X


def encode_labels(y) -> Tuple[np.ndarray, np.ndarray]:
    """Map arbitrary label values to contiguous indices; returns (indices, classes)."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    return np.searchsorted(classes, y).astype(np.int64), classes
