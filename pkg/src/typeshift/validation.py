"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .errors import NonFiniteInput, ShapeMismatch

_RANGE_SLACK = 1e-4


def check_glyph_batch(X, canvas: int | None = None, name: str = "X") -> np.ndarray:
    """Validate a stack of glyph images and return it as float32 NHWC.

    Accepts ``(N, H, W)`` grayscale or ``(N, H, W, 3)`` arrays with values in
    ``[-1, 1]`` (background +1, ink -1).  Grayscale input is replicated to
    three channels.
    """
    try:
        arr = check_array(X, ensure_2d=False, allow_nd=True, dtype=np.float32,
                          ensure_all_finite=True, input_name=name)
    except ValueError as exc:
        if "NaN" in str(exc) or "infinity" in str(exc):
            raise NonFiniteInput(str(exc)) from exc
        raise ShapeMismatch(str(exc)) from exc
    if arr.ndim == 3:
        arr = np.repeat(arr[..., None], 3, axis=-1)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ShapeMismatch(f"{name} must be (N, H, W) or (N, H, W, 3), got {arr.shape}")
    if arr.shape[1] != arr.shape[2]:
        raise ShapeMismatch(f"{name} images must be square, got {arr.shape[1:3]}")
    if canvas is not None and arr.shape[1] != canvas:
        raise ShapeMismatch(f"{name} images are {arr.shape[1]}px, model canvas is {canvas}px")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < -1 - _RANGE_SLACK or hi > 1 + _RANGE_SLACK:
        raise ShapeMismatch(f"{name} values must lie in [-1, 1], got [{lo:.3g}, {hi:.3g}]")
    return np.ascontiguousarray(arr)


def check_paired(X, y, canvas: int | None = None):
    X = check_glyph_batch(X, canvas, "X")
    y = check_glyph_batch(y, canvas, "y")
    if X.shape != y.shape:
        raise ShapeMismatch(f"X {X.shape} and y {y.shape} must have the same shape")
    return X, y
