"""Shared helpers for synthetic cameras, poses, and RGBD frames."""

import numpy as np
import pytest

from worldseed.camera import Camera, CameraIntrinsics, CameraPose
from worldseed.geometry import RgbdFrame
from worldseed.validation import INVALID_DEPTH


def make_intrinsics(width=8, height=8, fx=None, fy=None, cx=None, cy=None):
    fx = 0.8 * width if fx is None else fx
    fy = fx if fy is None else fy
    cx = (width - 1) / 2.0 if cx is None else cx
    cy = (height - 1) / 2.0 if cy is None else cy
    return CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)


def random_rotation(rng):
    """Uniform random rotation from a normalized quaternion."""
    q = rng.normal(size=4)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_pose(rng, translation_scale=1.0):
    return CameraPose(random_rotation(rng), rng.normal(scale=translation_scale, size=3))


def random_frame(rng, height=8, width=8, valid_fraction=1.0,
                 depth_range=(0.5, 5.0)):
    """Random RGBD frame; a ``valid_fraction`` share of pixels carries depth."""
    image = rng.uniform(size=(height, width, 3))
    depth = rng.uniform(depth_range[0], depth_range[1], size=(height, width))
    mask = rng.uniform(size=(height, width)) < valid_fraction
    depth[~mask] = INVALID_DEPTH
    image[~mask] = 0.0
    return RgbdFrame(image=image, depth=depth, mask=mask)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
