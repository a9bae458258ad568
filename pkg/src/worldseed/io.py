"""Readers and writers for point clouds, images, and depth maps.

Formats:
  * PLY, binary little-endian, per-vertex ``x y z`` float32 and
    ``red green blue`` uchar.
  * PNG for color images (8-bit RGB) and masks (1-bit).
  * PFM for 32-bit float depth, and 16-bit PNG with a JSON scale sidecar.
"""

from __future__ import annotations

import json
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import WorldCloud
from .validation import check_color_image, check_depth_map, check_mask

PLY_DTYPE = np.dtype([
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
    ("red", "u1"), ("green", "u1"), ("blue", "u1"),
])

DEPTH_PNG_MAX = 65535


def write_ply(path, cloud: WorldCloud) -> None:
    path = Path(path)
    n = len(cloud)
    header = "\n".join([
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]) + "\n"
    rows = np.empty(n, dtype=PLY_DTYPE)
    rows["x"] = cloud.positions[:, 0]
    rows["y"] = cloud.positions[:, 1]
    rows["z"] = cloud.positions[:, 2]
    rgb = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    rows["red"], rows["green"], rows["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    with path.open("wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rows.tobytes())


def read_ply(path) -> WorldCloud:
    path = Path(path)
    with path.open("rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ValueError(f"{path} is not a PLY file")
        n = None
        fmt = None
        properties = []
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: unterminated PLY header")
            tokens = line.split()
            if tokens[0] == b"format":
                fmt = tokens[1]
            elif tokens[0] == b"element" and tokens[1] == b"vertex":
                n = int(tokens[2])
            elif tokens[0] == b"property":
                properties.append(tokens[2])
            elif tokens[0] == b"end_header":
                break
        if fmt != b"binary_little_endian":
            raise ValueError(f"{path}: unsupported PLY format {fmt!r}")
        if n is None:
            raise ValueError(f"{path}: missing vertex element")
        expected = [b"x", b"y", b"z", b"red", b"green", b"blue"]
        if properties != expected:
            raise ValueError(f"{path}: unsupported vertex properties {properties}")
        payload = fh.read(n * PLY_DTYPE.itemsize)
    if len(payload) != n * PLY_DTYPE.itemsize:
        raise ValueError(f"{path}: truncated vertex data")
    rows = np.frombuffer(payload, dtype=PLY_DTYPE)
    positions = np.stack([rows["x"], rows["y"], rows["z"]], axis=1).astype(np.float64)
    colors = np.stack([rows["red"], rows["green"], rows["blue"]], axis=1) / 255.0
    return WorldCloud(positions, colors, np.zeros(n, dtype=np.int32))


def image_to_png_bytes(image: np.ndarray) -> bytes:
    image = check_color_image(image, "image")
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    buf = BytesIO()
    Image.fromarray(data, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(blob: bytes) -> np.ndarray:
    with Image.open(BytesIO(blob)) as img:
        data = np.asarray(img.convert("RGB"), dtype=np.float64)
    return data / 255.0


def mask_to_png_bytes(mask: np.ndarray) -> bytes:
    mask = check_mask(mask, "mask")
    buf = BytesIO()
    Image.fromarray(mask).convert("1").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_mask(blob: bytes) -> np.ndarray:
    with Image.open(BytesIO(blob)) as img:
        data = np.asarray(img.convert("L"))
    return data > 127


def write_image_png(path, image: np.ndarray) -> None:
    Path(path).write_bytes(image_to_png_bytes(image))


def read_image_png(path) -> np.ndarray:
    return png_bytes_to_image(Path(path).read_bytes())


def write_mask_png(path, mask: np.ndarray) -> None:
    Path(path).write_bytes(mask_to_png_bytes(mask))


def read_mask_png(path) -> np.ndarray:
    return png_bytes_to_mask(Path(path).read_bytes())


def write_pfm(path, depth: np.ndarray) -> None:
    """Grayscale PFM, rows bottom-up, negative scale marking little-endian."""
    depth = check_depth_map(depth, "depth")
    h, w = depth.shape
    with Path(path).open("wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(depth[::-1].astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    path = Path(path)
    with path.open("rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ValueError(f"{path} is not a grayscale PFM file")
        w, h = (int(t) for t in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(w * h * 4), dtype=dtype)
    if data.size != w * h:
        raise ValueError(f"{path}: truncated PFM data")
    return data.reshape(h, w)[::-1].astype(np.float64) * abs(scale)


def write_depth_png(path, depth: np.ndarray) -> None:
    """16-bit PNG with a JSON sidecar declaring meters-per-unit scale."""
    depth = check_depth_map(depth, "depth")
    top = float(depth.max())
    scale = top / DEPTH_PNG_MAX if top > 0 else 1.0
    data = np.clip(np.rint(depth / scale), 0, DEPTH_PNG_MAX).astype(np.uint16)
    path = Path(path)
    Image.fromarray(data).save(path, format="PNG")
    path.with_suffix(".json").write_text(json.dumps({"scale": scale}))


def read_depth_png(path) -> np.ndarray:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    with Image.open(path) as img:
        data = np.asarray(img, dtype=np.float64)
    return data * float(sidecar["scale"])
