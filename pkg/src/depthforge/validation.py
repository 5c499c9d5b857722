"""Input validation helpers used across the public API."""

from __future__ import annotations

import numpy as np

from .errors import DomainError


def as_float_array(values, name: str = "values", require_finite: bool = True) -> np.ndarray:
    """Coerce to a float64 array, optionally rejecting NaN/Inf."""
    arr = np.asarray(values, dtype=np.float64)
    if require_finite and not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def as_mask(mask, shape=None, name: str = "mask") -> np.ndarray:
    arr = np.asarray(mask)
    if arr.dtype != np.bool_:
        if not np.isin(arr, (0, 1)).all():
            raise DomainError(f"{name} must be boolean or 0/1 valued")
        arr = arr.astype(bool)
    if shape is not None and arr.shape != tuple(shape):
        raise DomainError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def check_image(image, name: str = "image") -> np.ndarray:
    """Validate a 3xHxW float image with entries in [0, 1]."""
    arr = as_float_array(image, name)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DomainError(f"{name} must have shape (3, H, W), got {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DomainError(f"{name} values must lie in [0, 1]")
    return arr


def check_same_hw(a_name: str, a: np.ndarray, b_name: str, b: np.ndarray) -> None:
    if a.shape[-2:] != b.shape[-2:]:
        raise DomainError(
            f"{a_name} and {b_name} disagree on HxW: {a.shape[-2:]} vs {b.shape[-2:]}"
        )


def frozen_copy(arr: np.ndarray) -> np.ndarray:
    """Owned, read-only copy; containers store these so values stay immutable."""
    out = np.array(arr)
    out.setflags(write=False)
    return out
