"""Foreground/background decomposition of an RGBD frame.

Candidate segments are filtered by confidence and relative area, classified
as foreground when their median depth falls below a dynamic threshold, and
the occluded background region is the part of the foreground whose depth
exceeds that threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import percentile
from .validation import check_depth_map, check_mask, check_unit_interval

TAU_IOU = 0.85
AREA_MIN_FRACTION = 0.005
AREA_MAX_FRACTION = 0.60
DEPTH_PERCENTILE = 0.35
RELATIVE_JUMP = 0.15

PROMPT_TEMPLATE = ("high-resolution {category} background with {colors} "
                   "colors, photorealistic, 8K")


@dataclass(frozen=True)
class CandidateSegment:
    """A proposed segment mask with a confidence score."""

    mask: np.ndarray
    score: float

    def __post_init__(self):
        object.__setattr__(self, "mask", check_mask(self.mask, "mask"))
        if not self.mask.any():
            raise ValueError("mask must cover at least one pixel")
        check_unit_interval(self.score, "score")

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class LayerDecomposition:
    """Foreground/background split with the occluded region and threshold."""

    foreground: np.ndarray
    background: np.ndarray
    occlusion: np.ndarray
    theta_d: float

    def __post_init__(self):
        fg = check_mask(self.foreground, "foreground")
        bg = check_mask(self.background, "background")
        occ = check_mask(self.occlusion, "occlusion")
        object.__setattr__(self, "foreground", fg)
        object.__setattr__(self, "background", bg)
        object.__setattr__(self, "occlusion", occ)
        if (bg != ~fg).any():
            raise ValueError("background must be the complement of foreground")
        if (occ & ~fg).any():
            raise ValueError("occlusion must lie inside the foreground")
        if not self.theta_d > 0:
            raise ValueError("theta_d must be positive")


@dataclass(frozen=True)
class PromptTemplate:
    """Rendered inpainting prompt with its slot values."""

    scene_category: str
    dominant_colors: tuple
    rendered: str = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dominant_colors", tuple(self.dominant_colors))
        object.__setattr__(
            self, "rendered",
            build_prompt(self.scene_category, list(self.dominant_colors)))


def build_prompt(scene_category: str, colors: list) -> str:
    if not scene_category:
        raise ValueError("scene_category must be non-empty")
    if not colors or any(not c for c in colors):
        raise ValueError("colors must be a non-empty list of non-empty names")
    return PROMPT_TEMPLATE.format(category=scene_category,
                                  colors=", ".join(colors))


def filter_segments(cands, tau_iou=TAU_IOU, a_min=AREA_MIN_FRACTION,
                    a_max=AREA_MAX_FRACTION, image_area=None):
    """Keep segments with score strictly above tau_iou and area within
    [a_min, a_max] of the image, both bounds inclusive."""
    check_unit_interval(tau_iou, "tau_iou")
    check_unit_interval(a_min, "a_min")
    check_unit_interval(a_max, "a_max")
    if not a_min < a_max:
        raise ValueError("a_min must be below a_max")
    kept = []
    for seg in cands:
        area = image_area if image_area is not None else seg.mask.size
        if seg.score > tau_iou and a_min * area <= seg.area <= a_max * area:
            kept.append(seg)
    return kept


def mask_median_depth(mask: np.ndarray, depth: np.ndarray) -> float:
    """Lower median of the valid depths under the mask."""
    values = depth[mask & (depth > 0)]
    if values.size == 0:
        raise ValueError("mask covers no valid depth")
    return float(np.sort(values)[(values.size - 1) // 2])


def classify_foreground(segments, depth: np.ndarray, theta_d: float) -> np.ndarray:
    """Union of segments whose median depth is strictly below theta_d."""
    depth = check_depth_map(depth, "depth")
    fg = np.zeros(depth.shape, dtype=bool)
    for seg in segments:
        if mask_median_depth(seg.mask, depth) < theta_d:
            fg |= seg.mask
    return fg


def occlusion_region(fg: np.ndarray, depth: np.ndarray, theta_d: float) -> np.ndarray:
    fg = check_mask(fg, "fg")
    depth = check_depth_map(depth, "depth")
    if fg.shape != depth.shape:
        raise ValueError("fg and depth dimensions differ")
    return fg & (depth > theta_d)


def decompose(depth: np.ndarray, candidates, tau_iou=TAU_IOU,
              a_min=AREA_MIN_FRACTION, a_max=AREA_MAX_FRACTION,
              depth_percentile=DEPTH_PERCENTILE) -> LayerDecomposition:
    """Full decomposition: filter, threshold, classify, and derive occlusion."""
    depth = check_depth_map(depth, "depth")
    theta_d = percentile(depth, depth_percentile)
    kept = filter_segments(candidates, tau_iou, a_min, a_max,
                           image_area=depth.size)
    fg = classify_foreground(kept, depth, theta_d)
    return LayerDecomposition(foreground=fg, background=~fg,
                              occlusion=occlusion_region(fg, depth, theta_d),
                              theta_d=theta_d)


def builtin_segment(depth: np.ndarray, rel_jump=RELATIVE_JUMP):
    """Segment a depth map into connected components split at relative
    depth jumps above rel_jump. Offline stand-in for a learned segmenter;
    scores reward depth-consistent components."""
    depth = check_depth_map(depth, "depth")
    valid = depth > 0
    if not valid.any():
        raise ValueError("depth has no valid pixels")
    h, w = depth.shape
    labels = np.arange(h * w)

    def find(i):
        root = i
        while labels[root] != root:
            root = labels[root]
        while labels[i] != root:
            labels[i], i = root, labels[i]
        return root

    def union(i, j):
        labels[find(i)] = find(j)

    flat = depth.ravel()
    idx = np.arange(h * w).reshape(h, w)
    for a, b in ((idx[:, :-1], idx[:, 1:]), (idx[:-1, :], idx[1:, :])):
        a, b = a.ravel(), b.ravel()
        da, db = flat[a], flat[b]
        joined = (da > 0) & (db > 0) & (np.abs(da - db) <= rel_jump * np.minimum(da, db))
        for i, j in zip(a[joined], b[joined]):
            union(i, j)

    roots = np.array([find(i) for i in idx.ravel()]).reshape(h, w)
    segments = []
    for root in np.unique(roots[valid]):
        mask = (roots == root) & valid
        values = depth[mask]
        median = float(np.sort(values)[(values.size - 1) // 2])
        spread = float(values.max() - values.min())
        score = float(np.clip(1.0 - spread / median, 0.0, 1.0))
        segments.append(CandidateSegment(mask=mask, score=score))
    segments.sort(key=lambda s: int(np.flatnonzero(s.mask.ravel())[0]))
    return segments


def normalize_depth(depth: np.ndarray) -> np.ndarray:
    """Min-max normalization over valid pixels; invalid pixels map to 0.
    A constant-depth map normalizes to zeros."""
    depth = check_depth_map(depth, "depth")
    valid = depth > 0
    out = np.zeros_like(depth)
    if not valid.any():
        return out
    lo, hi = depth[valid].min(), depth[valid].max()
    if hi > lo:
        out[valid] = (depth[valid] - lo) / (hi - lo)
    return out
