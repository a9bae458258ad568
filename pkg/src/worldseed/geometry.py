"""RGBD lifting, z-buffered point projection, and depth quantiles.

The two workhorses are inverses of each other up to coverage:

* ``lift_rgbd`` unprojects selected pixels of an RGBD frame through the
  pinhole model into world-space points;
* ``project_cloud`` splats a point cloud back onto a camera, keeping the
  nearest point per pixel, and reports which pixels were reached.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, CameraIntrinsics, CameraPose
from .validation import (
    INVALID_DEPTH,
    check_color_image,
    check_depth_map,
    check_mask,
    check_same_shape,
)

# Points closer than this (in meters, camera space) are culled at projection.
Z_NEAR = 1e-4


@dataclass
class RgbdFrame:
    """A color image, metric depth map, and validity mask at one camera."""

    image: np.ndarray   # (H, W, 3) float64 in [0, 1]
    depth: np.ndarray   # (H, W) float64, INVALID_DEPTH where mask is 0
    mask: np.ndarray    # (H, W) bool

    def __post_init__(self):
        self.image = check_color_image(self.image)
        self.depth = check_depth_map(self.depth)
        self.mask = check_mask(self.mask)
        check_same_shape(("image", self.image), ("depth", self.depth),
                         ("mask", self.mask))
        if (self.depth[self.mask] <= 0.0).any():
            raise ValueError("mask=1 pixels must carry a positive depth")
        if (self.depth[~self.mask] != INVALID_DEPTH).any():
            raise ValueError("mask=0 pixels must carry the invalid-depth sentinel")

    @classmethod
    def full(cls, image: np.ndarray, depth: np.ndarray) -> "RgbdFrame":
        """Frame whose every pixel is valid."""
        depth = check_depth_map(depth)
        return cls(image, depth, np.ones(depth.shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def valid_fraction(self) -> float:
        return float(self.mask.mean())


@dataclass
class WorldCloud:
    """Colored world-space points with the trajectory step that created them.

    Stored as parallel arrays; points are only ever appended, never moved
    or removed, so indices are stable across pipeline steps.
    """

    positions: np.ndarray = field(
        default_factory=lambda: np.empty((0, 3), dtype=np.float64))
    colors: np.ndarray = field(
        default_factory=lambda: np.empty((0, 3), dtype=np.float64))
    origin_steps: np.ndarray = field(
        default_factory=lambda: np.empty((0,), dtype=np.int32))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.origin_steps = np.asarray(self.origin_steps, dtype=np.int32).reshape(-1)
        if not (len(self.positions) == len(self.colors) == len(self.origin_steps)):
            raise ValueError("positions, colors and origin_steps must run parallel")
        if not np.isfinite(self.positions).all():
            raise ValueError("point positions must be finite")

    def __len__(self) -> int:
        return len(self.positions)

    def extend(self, other: "WorldCloud") -> "WorldCloud":
        """New cloud with ``other`` appended after this cloud's points."""
        return WorldCloud(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.colors, other.colors]),
            np.concatenate([self.origin_steps, other.origin_steps]),
        )


def lift_rgbd(frame: RgbdFrame, camera: Camera, select: np.ndarray | None = None,
              origin_step: int = 0) -> WorldCloud:
    """Unproject selected pixels of ``frame`` into a world-space point cloud.

    A pixel (u, v) with depth d lifts to the camera-space point
    ``(d*(u-cx)/fx, d*(v-cy)/fy, d)`` and is then moved to world coordinates
    through the inverse pose.  Points are emitted in row-major pixel order.

    ``select`` defaults to the frame's validity mask; every selected pixel
    must carry a valid depth.
    """
    intr = camera.intrinsics
    if frame.shape != intr.shape():
        raise ValueError(
            f"frame shape {frame.shape} does not match intrinsics {intr.shape()}")
    if select is None:
        select = frame.mask
    else:
        select = check_mask(select, "select")
        check_same_shape(("frame", frame.depth), ("select", select))
        if (select & ~frame.mask).any():
            raise ValueError("select includes pixels without valid depth")

    vs, us = np.nonzero(select)
    depth = frame.depth[vs, us]
    x = depth * (us - intr.cx) / intr.fx
    y = depth * (vs - intr.cy) / intr.fy
    cam_points = np.stack([x, y, depth], axis=1)
    positions = camera.pose.to_world(cam_points)
    colors = frame.image[vs, us]
    steps = np.full(len(vs), origin_step, dtype=np.int32)
    return WorldCloud(positions, colors, steps)


def project_cloud(cloud: WorldCloud, camera: Camera,
                  z_near: float = Z_NEAR) -> RgbdFrame:
    """Render ``cloud`` onto ``camera`` with a 1-pixel z-buffered footprint.

    Each point in front of the camera (z > z_near) lands on its nearest
    pixel; the smallest camera-space depth wins, with exact ties resolved
    in favor of the lower point index.  Pixels no point reaches get a zero
    mask, black color, and the invalid-depth sentinel.
    """
    intr = camera.intrinsics
    height, width = intr.shape()
    image = np.zeros((height, width, 3), dtype=np.float64)
    depth = np.full((height, width), INVALID_DEPTH, dtype=np.float64)
    mask = np.zeros((height, width), dtype=bool)
    frame = RgbdFrame(image, depth, mask)
    if len(cloud) == 0:
        return frame

    cam = camera.pose.to_camera(cloud.positions)
    z = cam[:, 2]
    in_front = z > z_near
    if not in_front.any():
        return frame

    idx = np.nonzero(in_front)[0]
    cam = cam[idx]
    z = z[idx]
    u = np.rint(intr.fx * cam[:, 0] / z + intr.cx).astype(np.int64)
    v = np.rint(intr.fy * cam[:, 1] / z + intr.cy).astype(np.int64)
    in_bounds = (u >= 0) & (u < width) & (v >= 0) & (v < height)
    if not in_bounds.any():
        return frame
    idx = idx[in_bounds]
    z = z[in_bounds]
    pixel = v[in_bounds] * width + u[in_bounds]

    # Winner per pixel: minimum depth, ties to the lower point index.  The
    # lexsort orders candidates exactly by that rule, so taking the first
    # entry of each pixel run is the sequential result regardless of how the
    # candidate arrays were produced.
    order = np.lexsort((idx, z, pixel))
    pixel_sorted = pixel[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pixel_sorted[1:] != pixel_sorted[:-1]
    winners = order[first]

    win_pixel = pixel[winners]
    vs, us = np.divmod(win_pixel, width)
    frame.depth[vs, us] = z[winners]
    frame.image[vs, us] = cloud.colors[idx[winners]]
    frame.mask[vs, us] = True
    return frame


def percentile(depth: np.ndarray, p: float,
               mask: np.ndarray | None = None) -> float:
    """Nearest-rank p-quantile over the valid depths of ``depth``.

    Rank ``ceil(p * n)`` (at least 1) of the ascending valid values, so
    p=0 gives the minimum and p=1 the maximum.
    """
    depth = check_depth_map(depth)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if mask is None:
        values = depth[depth > 0.0]
    else:
        mask = check_mask(mask)
        check_same_shape(("depth", depth), ("mask", mask))
        values = depth[mask]
        if (values <= 0.0).any():
            raise ValueError("mask selects pixels without valid depth")
    if values.size == 0:
        raise ValueError("depth map has no valid pixels")
    values = np.sort(values)
    rank = max(1, int(np.ceil(p * values.size)))
    return float(values[rank - 1])
