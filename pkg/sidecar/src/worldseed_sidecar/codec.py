"""Wire codecs: base64 PNG images and masks, base64 float32 rasters.

Images stay uint8 on the server so known-pixel compositing happens in
the byte domain; models convert to floats internally as needed.  Any
undecodable payload raises ValueError, which the service maps to 400.
"""

from __future__ import annotations

import base64
import binascii
from io import BytesIO

import numpy as np
from PIL import Image, UnidentifiedImageError


def _b64decode(payload: str, what: str) -> bytes:
    try:
        return base64.b64decode(payload, validate=True)
    except (binascii.Error, TypeError, ValueError) as exc:
        raise ValueError(f"{what} is not valid base64: {exc}") from exc


def decode_image_b64(payload: str) -> np.ndarray:
    """Base64 PNG to a (H, W, 3) uint8 array."""
    blob = _b64decode(payload, "image")
    try:
        with Image.open(BytesIO(blob)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ValueError(f"image is not decodable PNG data: {exc}") from exc


def encode_image_b64(image: np.ndarray) -> str:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be (H, W, 3) uint8")
    buf = BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_mask_b64(payload: str) -> np.ndarray:
    """Base64 PNG to a boolean mask; 1 = known pixel."""
    blob = _b64decode(payload, "mask")
    try:
        with Image.open(BytesIO(blob)) as img:
            return np.asarray(img.convert("L")) > 127
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ValueError(f"mask is not decodable PNG data: {exc}") from exc


def decode_raster(obj: dict) -> np.ndarray:
    """{data, width, height} with little-endian float32 rows to float64."""
    width, height = int(obj["width"]), int(obj["height"])
    if width <= 0 or height <= 0:
        raise ValueError("raster dimensions must be positive")
    raw = _b64decode(obj["data"], "raster")
    if len(raw) != width * height * 4:
        raise ValueError("raster payload size does not match dimensions")
    return np.frombuffer(raw, dtype="<f4").reshape(height, width).astype(np.float64)


def encode_raster(grid: np.ndarray) -> dict:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("raster grids must be 2-dimensional")
    data = base64.b64encode(grid.astype("<f4").tobytes()).decode("ascii")
    return {"data": data, "width": grid.shape[1], "height": grid.shape[0]}
