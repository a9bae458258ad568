"""Reference models behind the three endpoints.

These are deliberately small, deterministic, CPU-only stand-ins so the
service contract can be exercised without model weights.  Swapping in a
heavyweight generative model means registering another builder under a
new identifier; nothing in the protocol changes.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

LUMA_WEIGHTS = (0.2126, 0.7152, 0.0722)
DEPTH_NEAR = 1.0
DEPTH_LUMA_RANGE = 3.0
DEPTH_ROW_RANGE = 1.0
SMOOTHING_PASSES = 2

PALETTE = (
    ("black", (0.0, 0.0, 0.0)),
    ("white", (1.0, 1.0, 1.0)),
    ("gray", (0.5, 0.5, 0.5)),
    ("red", (1.0, 0.0, 0.0)),
    ("green", (0.0, 1.0, 0.0)),
    ("blue", (0.0, 0.0, 1.0)),
    ("yellow", (1.0, 1.0, 0.0)),
    ("orange", (1.0, 0.5, 0.0)),
    ("brown", (0.55, 0.35, 0.15)),
    ("purple", (0.55, 0.0, 0.55)),
    ("pink", (1.0, 0.6, 0.75)),
    ("cyan", (0.0, 1.0, 1.0)),
)


class NearestFieldInpainter:
    """Fill unknown pixels from their nearest known pixel, then relax.

    The prompt and normalized-depth conditioning are accepted for
    protocol compatibility and ignored: this reference fill is purely
    spatial.  Known pixels are re-composited by the service afterwards,
    so the fill only has to be plausible in the hole.
    """

    def inpaint(self, image: np.ndarray, known: np.ndarray, prompt: str = "",
                normalized_depth: np.ndarray | None = None) -> np.ndarray:
        del prompt, normalized_depth
        values = image.astype(np.float64) / 255.0
        if known.all():
            return values
        _, (rows, cols) = ndimage.distance_transform_edt(
            ~known, return_indices=True)
        filled = values[rows, cols]
        hole = ~known
        for _ in range(SMOOTHING_PASSES):
            blurred = ndimage.uniform_filter(filled, size=(3, 3, 1),
                                             mode="nearest")
            filled = np.where(hole[..., None], blurred, filled)
        return np.clip(filled, 0.0, 1.0)


class ShadedPriorDepth:
    """Metric pseudo-depth from a shading-plus-ground prior: darker
    pixels and pixels higher in the frame read as farther away."""

    def estimate(self, image: np.ndarray) -> np.ndarray:
        values = image.astype(np.float64) / 255.0
        luma = sum(w * values[..., c] for c, w in enumerate(LUMA_WEIGHTS))
        height = image.shape[0]
        row = np.arange(height, dtype=np.float64) / max(height - 1, 1)
        return (DEPTH_NEAR + DEPTH_LUMA_RANGE * (1.0 - luma)
                + DEPTH_ROW_RANGE * (1.0 - row)[:, None])


class PaletteVoteCaptioner:
    """Fixed 'scene' category; colors are the three most common nearest
    palette names, most frequent first, ties broken by palette order."""

    def caption(self, image: np.ndarray):
        values = image.astype(np.float64).reshape(-1, 3) / 255.0
        anchors = np.array([rgb for _, rgb in PALETTE])
        dists = ((values[:, None, :] - anchors[None]) ** 2).sum(axis=2)
        votes = np.bincount(dists.argmin(axis=1), minlength=len(PALETTE))
        ranked = np.argsort(-votes, kind="stable")
        names = [PALETTE[k][0] for k in ranked[:3] if votes[k] > 0]
        return "scene", names


BUILDERS = {
    "nearest-field-v0": NearestFieldInpainter,
    "shaded-prior-v0": ShadedPriorDepth,
    "palette-vote-v0": PaletteVoteCaptioner,
}
