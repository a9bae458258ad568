"""Pinhole camera model: intrinsics and rigid camera-from-world poses.

Conventions (fixed for the whole package):

* camera frame: +x right, +y down, +z is the viewing direction;
* ``CameraPose`` stores the camera-from-world transform, so a world point
  ``p`` maps to camera coordinates as ``R @ p + t``;
* pixel ``(u, v)`` samples the image at integer coordinates, ``u`` along
  the width axis and ``v`` along the height axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHONORMALITY_TOL = 1e-9

# World "down" direction: the camera frame has +y down, and the world frame
# is anchored to the input camera, so (0, 1, 0) is down in both.
WORLD_DOWN = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixel units for a width x height image."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be > 0, got {self.fx}, {self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    @classmethod
    def default(cls, width: int, height: int) -> "CameraIntrinsics":
        """Default intrinsics for generated images: fx = fy = 0.8 * width,
        principal point at the center of the pixel grid."""
        f = 0.8 * width
        return cls(fx=f, fy=f, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                   width=int(width), height=int(height))

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class CameraPose:
    """Rigid camera-from-world transform: x_cam = rotation @ x_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation not orthonormal (max error {err:.3e})")
        if abs(np.linalg.det(rot) - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError("rotation must have determinant +1")

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def look_at(cls, center, target, down=WORLD_DOWN) -> "CameraPose":
        """Pose of a camera at ``center`` whose +z axis points at ``target``."""
        center = np.asarray(center, dtype=np.float64).reshape(3)
        target = np.asarray(target, dtype=np.float64).reshape(3)
        forward = target - center
        norm = np.linalg.norm(forward)
        if norm == 0.0:
            raise ValueError("look_at target coincides with camera center")
        forward = forward / norm
        right = np.cross(down, forward)
        norm = np.linalg.norm(right)
        if norm < 1e-12:
            raise ValueError("viewing direction parallel to the down axis")
        right = right / norm
        true_down = np.cross(forward, right)
        rotation = np.stack([right, true_down, forward])
        return cls(rotation, -rotation @ center)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        """Viewing direction (+z axis of the camera) in world coordinates."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 3) world points into camera coordinates."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def to_world(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 3) camera-space points back into world coordinates."""
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ self.rotation

    def inverse_matrix(self) -> np.ndarray:
        """4x4 world-from-camera matrix."""
        mat = np.eye(4)
        mat[:3, :3] = self.rotation.T
        mat[:3, 3] = self.center
        return mat

    def matrix(self) -> np.ndarray:
        """4x4 camera-from-world matrix."""
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat


@dataclass
class Camera:
    """Intrinsics plus pose; the unit every projection call consumes."""

    intrinsics: CameraIntrinsics
    pose: CameraPose = field(default_factory=CameraPose.identity)
