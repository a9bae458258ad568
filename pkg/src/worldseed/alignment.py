"""Depth alignment of freshly lifted points to the existing cloud.

At the mask boundary both depth sources exist: the projected depth of the
existing cloud and the newly estimated depth. Their ratio per band pixel is
a multiplicative correction, interpolated across the inpainted region and
applied by sliding each new point along its camera ray, which leaves its
projected pixel untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .camera import CameraIntrinsics, CameraPose
from .geometry import WorldCloud
from .validation import check_depth_map, check_mask

IDW_NEIGHBORS = 8
FACTOR_MIN = 0.2
FACTOR_MAX = 5.0


@dataclass(frozen=True)
class BoundaryBand:
    """Band pixels in row-major order with both depth readings."""

    pixels: np.ndarray          # (n, 2) integer (row, col)
    existing_depth: np.ndarray  # (n,)
    new_depth: np.ndarray       # (n,)

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        existing = np.asarray(self.existing_depth, dtype=np.float64).ravel()
        new = np.asarray(self.new_depth, dtype=np.float64).ravel()
        if not (len(pixels) == len(existing) == len(new)):
            raise ValueError("band arrays must share one length")
        if len(existing) and (existing.min() <= 0 or new.min() <= 0):
            raise ValueError("band depths must be positive")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "existing_depth", existing)
        object.__setattr__(self, "new_depth", new)

    def __len__(self):
        return len(self.pixels)

    @property
    def factors(self) -> np.ndarray:
        """Per-pixel multiplicative depth correction, clamped against
        degenerate estimates."""
        return np.clip(self.existing_depth / self.new_depth,
                       FACTOR_MIN, FACTOR_MAX)

    def to_records(self) -> list:
        return [{"row": int(v), "col": int(u), "existing": float(e),
                 "new": float(n), "factor": float(f)}
                for (v, u), e, n, f in zip(self.pixels, self.existing_depth,
                                           self.new_depth, self.factors)]


@dataclass(frozen=True)
class ShiftField:
    """Grid of depth scale factors; 1.0 means leave the ray alone."""

    factors: np.ndarray

    def __post_init__(self):
        factors = np.asarray(self.factors, dtype=np.float64)
        if factors.ndim != 2:
            raise ValueError("factors must be a 2-d grid")
        if not np.isfinite(factors).all() or factors.min() <= 0:
            raise ValueError("factors must be finite and positive")
        object.__setattr__(self, "factors", factors)

    @classmethod
    def identity(cls, shape) -> "ShiftField":
        return cls(np.ones(shape))


def extract_boundary(mask: np.ndarray, existing_depth: np.ndarray,
                     new_depth: np.ndarray) -> BoundaryBand:
    """Pixels whose mask value differs from a 4-neighbor and that carry
    valid depth in both sources."""
    mask = check_mask(mask, "mask")
    existing_depth = check_depth_map(existing_depth, "existing_depth")
    new_depth = check_depth_map(new_depth, "new_depth")
    if not mask.shape == existing_depth.shape == new_depth.shape:
        raise ValueError("mask and depth dimensions differ")
    edge = np.zeros(mask.shape, dtype=bool)
    horizontal = mask[:, :-1] != mask[:, 1:]
    vertical = mask[:-1, :] != mask[1:, :]
    edge[:, :-1] |= horizontal
    edge[:, 1:] |= horizontal
    edge[:-1, :] |= vertical
    edge[1:, :] |= vertical
    band = edge & (existing_depth > 0) & (new_depth > 0)
    rows, cols = np.nonzero(band)
    return BoundaryBand(np.stack([rows, cols], axis=1),
                        existing_depth[rows, cols], new_depth[rows, cols])


def interpolate_shift(band: BoundaryBand, region: np.ndarray,
                      k: int = IDW_NEIGHBORS) -> ShiftField:
    """Inverse-distance weighting (power 1) of the k nearest band factors
    over the region; band pixels keep their exact factor; everything else
    stays 1.0."""
    if len(band) == 0:
        raise ValueError("band is empty; skip alignment instead")
    region = check_mask(region, "region")
    field = np.ones(region.shape)
    factors = band.factors
    field[band.pixels[:, 0], band.pixels[:, 1]] = factors
    on_band = np.zeros(region.shape, dtype=bool)
    on_band[band.pixels[:, 0], band.pixels[:, 1]] = True
    query = region & ~on_band
    if query.any():
        rows, cols = np.nonzero(query)
        tree = cKDTree(band.pixels)
        neighbors = min(k, len(band))
        dist, idx = tree.query(np.stack([rows, cols], axis=1), k=neighbors)
        dist = dist.reshape(len(rows), neighbors)
        idx = idx.reshape(len(rows), neighbors)
        weights = 1.0 / dist
        field[rows, cols] = ((weights * factors[idx]).sum(axis=1)
                             / weights.sum(axis=1))
    return ShiftField(field)


def apply_shift(new_points: WorldCloud, field: ShiftField,
                intrinsics: CameraIntrinsics, pose: CameraPose) -> WorldCloud:
    """Scale each point's camera-space position by its pixel's factor.

    Scaling the full camera-space vector preserves the ray direction and
    the projected pixel exactly; points whose factor is 1.0 are returned
    bit-identical.
    """
    if len(new_points) == 0:
        return new_points
    if field.factors.shape != intrinsics.shape():
        raise ValueError("field and intrinsics dimensions differ")
    in_cam = pose.to_camera(new_points.positions)
    z = in_cam[:, 2]
    if (z <= 0).any():
        raise ValueError("points must lie in front of the camera")
    u = np.rint(intrinsics.fx * in_cam[:, 0] / z + intrinsics.cx).astype(int)
    v = np.rint(intrinsics.fy * in_cam[:, 1] / z + intrinsics.cy).astype(int)
    inside = ((u >= 0) & (u < intrinsics.width)
              & (v >= 0) & (v < intrinsics.height))
    if not inside.all():
        raise ValueError("points project outside the shift field")
    factor = field.factors[v, u]
    moved = pose.to_world(in_cam * factor[:, None])
    positions = np.where((factor == 1.0)[:, None], new_points.positions, moved)
    return WorldCloud(positions, new_points.colors.copy(),
                      new_points.origin_steps.copy())


def merge(existing: WorldCloud, aligned_new: WorldCloud) -> WorldCloud:
    """Ordered concatenation; the existing cloud is never modified."""
    return existing.extend(aligned_new)
