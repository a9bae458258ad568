"""Input validation helpers shared by the public entry points.

All helpers either return the validated array (possibly converted to the
canonical dtype) or raise ``ValueError`` with a message naming the offending
argument, so callers can pass user-supplied data straight in.
"""

from __future__ import annotations

import numpy as np

# Depth maps use 0.0 as the "no data" sentinel; valid entries are > 0.
INVALID_DEPTH = 0.0


def check_color_image(image, name: str = "image") -> np.ndarray:
    """Validate an (H, W, 3) RGB image with channels in [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} channels must lie in [0, 1]")
    return arr


def check_depth_map(depth, name: str = "depth") -> np.ndarray:
    """Validate an (H, W) depth map; entries are either > 0 or the 0.0 sentinel."""
    arr = np.asarray(depth, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must have shape (H, W), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    if (arr < 0.0).any():
        raise ValueError(f"{name} contains negative depths")
    return arr


def check_mask(mask, name: str = "mask") -> np.ndarray:
    """Validate an (H, W) binary mask and return it as bool."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name} must have shape (H, W), got {arr.shape}")
    if arr.dtype != np.bool_:
        values = np.unique(arr)
        if not np.isin(values, (0, 1)).all():
            raise ValueError(f"{name} must be binary, found values {values[:8]}")
        arr = arr.astype(bool)
    return arr


def check_same_shape(*named_arrays) -> None:
    """Check that every (name, array) pair shares the same leading (H, W)."""
    shapes = [(name, arr.shape[:2]) for name, arr in named_arrays]
    first_name, first = shapes[0]
    for name, shape in shapes[1:]:
        if shape != first:
            raise ValueError(
                f"shape mismatch: {first_name} is {first} but {name} is {shape}"
            )


def check_unit_interval(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not value > 0.0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value
