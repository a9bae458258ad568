"""Generative backends: inpainting, metric depth, and captioning.

Each interface ships a deterministic builtin and a remote HTTP client.
Builtins keep the whole pipeline runnable and exactly testable offline:
the inpainter is a multiscale pull-push fill, the depth estimator ray-casts
a registered analytic scene, and the captioner clusters pixel colors.

Remote clients speak a JSON-over-HTTP protocol:
  POST /inpaint {image, mask, prompt, normalized_depth?} -> {image}
  POST /depth   {image}                                  -> {depth, scale}
  POST /caption {image}                                  -> {category, colors}

Images and masks travel as base64 PNG; depth grids as base64 raster objects
{data, width, height} holding little-endian float32 rows. Mask polarity is
1 = known pixel, 0 = pixel to fill. Known pixels are re-composited from the
request on the client, so they survive transport quantization bit-exactly.
"""

from __future__ import annotations

import base64
import os
from dataclasses import dataclass

import numpy as np
import requests

from .camera import Camera
from .io import (
    image_to_png_bytes,
    mask_to_png_bytes,
    png_bytes_to_image,
    png_bytes_to_mask,
)
from .scenes import AnalyticScene
from .validation import check_color_image, check_depth_map, check_mask

ENV_SIDECAR_URL = "WORLDSEED_SIDECAR_URL"
DEFAULT_TIMEOUT = 60.0
RETRIES = 2

K_CLUSTERS = 3
LLOYD_ITERATIONS = 10
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


class BackendError(RuntimeError):
    """A remote backend failed or answered outside its contract."""


@dataclass(frozen=True)
class InpaintRequest:
    """Inpainting job; mask=1 pixels are known and must survive untouched."""

    image: np.ndarray
    mask: np.ndarray
    prompt: str = ""
    normalized_depth: np.ndarray | None = None

    def __post_init__(self):
        image = check_color_image(self.image, "image")
        mask = check_mask(self.mask, "mask")
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "mask", mask)
        if image.shape[:2] != mask.shape:
            raise ValueError("image and mask dimensions differ")
        if not mask.any():
            raise ValueError("mask has no known pixels")
        if self.normalized_depth is not None:
            nd = np.asarray(self.normalized_depth, dtype=np.float64)
            if nd.shape != mask.shape:
                raise ValueError("normalized_depth dimensions differ")
            if not np.isfinite(nd).all() or nd.min() < 0 or nd.max() > 1:
                raise ValueError("normalized_depth must lie in [0, 1]")
            object.__setattr__(self, "normalized_depth", nd)


# --- wire codecs -----------------------------------------------------------

def encode_image(image: np.ndarray) -> str:
    return base64.b64encode(image_to_png_bytes(image)).decode("ascii")


def decode_image(payload: str) -> np.ndarray:
    return png_bytes_to_image(base64.b64decode(payload))


def encode_mask(mask: np.ndarray) -> str:
    return base64.b64encode(mask_to_png_bytes(mask)).decode("ascii")


def decode_mask(payload: str) -> np.ndarray:
    return png_bytes_to_mask(base64.b64decode(payload))


def encode_raster(grid: np.ndarray) -> dict:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("raster grids must be 2-dimensional")
    data = base64.b64encode(grid.astype("<f4").tobytes()).decode("ascii")
    return {"data": data, "width": grid.shape[1], "height": grid.shape[0]}


def decode_raster(obj: dict) -> np.ndarray:
    w, h = int(obj["width"]), int(obj["height"])
    raw = base64.b64decode(obj["data"])
    if len(raw) != w * h * 4:
        raise ValueError("raster payload size does not match dimensions")
    return np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(np.float64)


# --- builtin implementations ------------------------------------------------

def _downsample(values: np.ndarray, valid: np.ndarray):
    """Average the valid pixels of each 2x2 block; a block with any valid
    pixel becomes valid."""
    h, w = valid.shape
    ph, pw = -(-h // 2) * 2, -(-w // 2) * 2
    vp = np.zeros((ph, pw, values.shape[2]))
    kp = np.zeros((ph, pw), dtype=bool)
    vp[:h, :w] = values
    kp[:h, :w] = valid
    quads_v = (vp[0::2, 0::2], vp[0::2, 1::2], vp[1::2, 0::2], vp[1::2, 1::2])
    quads_k = (kp[0::2, 0::2], kp[0::2, 1::2], kp[1::2, 0::2], kp[1::2, 1::2])
    count = sum(k.astype(np.float64) for k in quads_k)
    total = sum(v * k[..., None] for v, k in zip(quads_v, quads_k))
    out_valid = count > 0
    out = total / np.maximum(count, 1.0)[..., None]
    return out, out_valid


def pull_push_fill(image: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Fill unknown pixels by pulling known averages up a 2x2 pyramid and
    pushing them back down by replication. Known pixels pass through."""
    values = np.where(known[..., None], image, 0.0)
    levels = [(values, known)]
    while not levels[-1][1].all() and levels[-1][1].size > 1:
        levels.append(_downsample(*levels[-1]))
    filled = levels[-1][0]
    for values, valid in levels[-2::-1]:
        h, w = valid.shape
        parent = filled[np.arange(h) // 2][:, np.arange(w) // 2]
        filled = np.where(valid[..., None], values, parent)
    return np.where(known[..., None], image, filled)


class BuiltinInpainter:
    """Deterministic pull-push fill; ignores the prompt and depth hint."""

    def inpaint(self, req: InpaintRequest) -> np.ndarray:
        if req.mask.all():
            return req.image.copy()
        return pull_push_fill(req.image, req.mask)


def apply_hint(depth: np.ndarray, hint: np.ndarray | None) -> np.ndarray:
    """Overlay valid hint pixels onto an estimate, exactly."""
    if hint is None:
        return depth
    hint = check_depth_map(hint, "hint")
    if hint.shape != depth.shape:
        raise ValueError("hint dimensions differ from the estimate")
    return np.where(hint > 0, hint, depth)


class BuiltinDepthEstimator:
    """Oracle estimator that ray-casts a registered analytic scene."""

    def __init__(self, scene: AnalyticScene):
        if scene is None:
            raise ValueError("builtin depth estimation needs an analytic scene")
        self.scene = scene

    def estimate(self, image: np.ndarray, camera: Camera | None = None,
                 hint: np.ndarray | None = None) -> np.ndarray:
        image = check_color_image(image, "image")
        if camera is None:
            raise ValueError("builtin depth estimation needs the query camera")
        if camera.intrinsics.shape() != image.shape[:2]:
            raise ValueError("camera dimensions do not match the image")
        depth = self.scene.depth_at(camera)
        return apply_hint(depth, hint)


class BuiltinCaptioner:
    """Fixed 'scene' category plus k-means dominant colors snapped to a
    small palette. Initialization is quantile-based, so output is a pure
    function of the image."""

    def caption(self, image: np.ndarray):
        image = check_color_image(image, "image")
        pixels = image.reshape(-1, 3)
        order = np.lexsort((pixels[:, 2], pixels[:, 1], pixels[:, 0]))
        ranks = [len(order) // 6, len(order) // 2, (5 * len(order)) // 6]
        centroids = pixels[order[ranks]].copy()
        for _ in range(LLOYD_ITERATIONS):
            dists = ((pixels[:, None, :] - centroids[None]) ** 2).sum(axis=2)
            assign = dists.argmin(axis=1)
            for k in range(K_CLUSTERS):
                members = pixels[assign == k]
                if len(members):
                    centroids[k] = members.mean(axis=0)
        sizes = np.bincount(assign, minlength=K_CLUSTERS)
        names = []
        for k in np.argsort(-sizes, kind="stable"):
            if sizes[k] == 0:
                continue
            name = min(PALETTE,
                       key=lambda nc: float(((centroids[k] - nc[1]) ** 2).sum()))[0]
            if name not in names:
                names.append(name)
        return "scene", names


# --- remote clients ---------------------------------------------------------

def _post_json(url: str, payload: dict, timeout: float) -> dict:
    last_error = None
    for _ in range(RETRIES + 1):
        try:
            response = requests.post(url, json=payload, timeout=timeout)
        except requests.RequestException as exc:
            last_error = str(exc)
            continue
        if response.status_code >= 500:
            last_error = f"status {response.status_code}"
            continue
        if response.status_code != 200:
            raise BackendError(
                f"{url} answered {response.status_code}: {response.text[:200]}")
        try:
            return response.json()
        except ValueError as exc:
            raise BackendError(f"{url} returned invalid JSON: {exc}") from exc
    raise BackendError(f"{url} unreachable after {RETRIES + 1} attempts: "
                       f"{last_error}")


@dataclass(frozen=True)
class RemoteInpainter:
    base_url: str
    timeout: float = DEFAULT_TIMEOUT

    def inpaint(self, req: InpaintRequest) -> np.ndarray:
        payload = {"image": encode_image(req.image),
                   "mask": encode_mask(req.mask),
                   "prompt": req.prompt}
        if req.normalized_depth is not None:
            payload["normalized_depth"] = encode_raster(req.normalized_depth)
        body = _post_json(f"{self.base_url}/inpaint", payload, self.timeout)
        try:
            out = decode_image(body["image"])
        except (KeyError, ValueError, TypeError) as exc:
            raise BackendError(f"malformed /inpaint response: {exc}") from exc
        if out.shape != req.image.shape:
            raise BackendError("/inpaint returned mismatched dimensions")
        # Transport is 8-bit; restore known pixels from the request itself.
        return np.where(req.mask[..., None], req.image, out)


@dataclass(frozen=True)
class RemoteDepthEstimator:
    base_url: str
    timeout: float = DEFAULT_TIMEOUT

    def estimate(self, image: np.ndarray, camera: Camera | None = None,
                 hint: np.ndarray | None = None) -> np.ndarray:
        image = check_color_image(image, "image")
        body = _post_json(f"{self.base_url}/depth",
                          {"image": encode_image(image)}, self.timeout)
        try:
            depth = decode_raster(body["depth"]) * float(body["scale"])
        except (KeyError, ValueError, TypeError) as exc:
            raise BackendError(f"malformed /depth response: {exc}") from exc
        if depth.shape != image.shape[:2]:
            raise BackendError("/depth returned mismatched dimensions")
        if not np.isfinite(depth).all() or (depth <= 0).any():
            raise BackendError("/depth returned non-metric values")
        return apply_hint(depth, hint)


@dataclass(frozen=True)
class RemoteCaptioner:
    base_url: str
    timeout: float = DEFAULT_TIMEOUT

    def caption(self, image: np.ndarray):
        image = check_color_image(image, "image")
        body = _post_json(f"{self.base_url}/caption",
                          {"image": encode_image(image)}, self.timeout)
        try:
            category = str(body["category"])
            colors = [str(c) for c in body["colors"]]
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed /caption response: {exc}") from exc
        if not category or not colors or any(not c for c in colors):
            raise BackendError("/caption returned empty category or colors")
        return category, colors


@dataclass(frozen=True)
class BackendSuite:
    """The resolved trio of backends the pipeline runs against."""

    inpainter: object
    depth_estimator: object
    captioner: object

    @classmethod
    def builtin(cls, scene: AnalyticScene) -> "BackendSuite":
        return cls(BuiltinInpainter(), BuiltinDepthEstimator(scene),
                   BuiltinCaptioner())

    @classmethod
    def remote(cls, base_url: str,
               timeout: float = DEFAULT_TIMEOUT) -> "BackendSuite":
        base_url = base_url.rstrip("/")
        return cls(RemoteInpainter(base_url, timeout),
                   RemoteDepthEstimator(base_url, timeout),
                   RemoteCaptioner(base_url, timeout))

    @classmethod
    def from_config(cls, config: dict | None,
                    scene: AnalyticScene | None = None) -> "BackendSuite":
        config = dict(config or {})
        override = os.environ.get(ENV_SIDECAR_URL)
        if override:
            config = {"kind": "remote", "url": override,
                      "timeout": config.get("timeout", DEFAULT_TIMEOUT)}
        kind = config.get("kind", "builtin")
        if kind == "remote":
            url = config.get("url")
            if not url:
                raise ValueError("remote backends need a url")
            return cls.remote(url, float(config.get("timeout",
                                                    DEFAULT_TIMEOUT)))
        if kind == "builtin":
            if scene is None:
                raise ValueError("builtin backends need an analytic scene")
            return cls.builtin(scene)
        raise ValueError(f"unknown backend kind {kind!r}")
