"""Regenerate the golden wire fixtures under tests/fixtures/.

Requests and responses are recorded from the worldseed package's builtin
backends, so the fixtures capture exactly what a pipeline client puts on
the wire.  The worldseed package is needed only to run this script; the
committed fixtures are static and the test suite never imports it.

Usage: python3 tools/record_fixtures.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from worldseed.backends import (
    BuiltinCaptioner,
    BuiltinDepthEstimator,
    BuiltinInpainter,
    InpaintRequest,
    encode_image,
    encode_mask,
    encode_raster,
)
from worldseed.camera import Camera, CameraIntrinsics, CameraPose
from worldseed.layering import build_prompt, normalize_depth
from worldseed.scenes import two_planes

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
SIZE = 16


def main():
    scene = two_planes()
    camera = Camera(CameraIntrinsics.default(SIZE, SIZE), CameraPose.identity())
    frame = scene.render_rgbd(camera)
    image = frame.image
    depth = frame.depth

    hole_mask = np.ones((SIZE, SIZE), dtype=bool)
    hole_mask[:, -5:] = False
    prompt = build_prompt("scene", ["brown", "blue", "gray"])
    hole_request = InpaintRequest(image, hole_mask, prompt,
                                  normalize_depth(depth))
    fixtures = {
        "inpaint_hole": {
            "endpoint": "/inpaint",
            "request": {
                "image": encode_image(image),
                "mask": encode_mask(hole_mask),
                "prompt": prompt,
                "normalized_depth": encode_raster(normalize_depth(depth)),
            },
            "response": {
                "image": encode_image(BuiltinInpainter().inpaint(hole_request)),
            },
        },
        "inpaint_identity": {
            "endpoint": "/inpaint",
            "request": {
                "image": encode_image(image),
                "mask": encode_mask(np.ones((SIZE, SIZE), dtype=bool)),
                "prompt": "",
            },
            "response": {"image": encode_image(image)},
        },
        "depth_scene": {
            "endpoint": "/depth",
            "request": {"image": encode_image(image)},
            "response": {
                "depth": encode_raster(
                    BuiltinDepthEstimator(scene).estimate(image, camera)),
                "scale": 1.0,
            },
        },
        "caption_scene": {
            "endpoint": "/caption",
            "request": {"image": encode_image(image)},
            "response": dict(zip(("category", "colors"),
                                 BuiltinCaptioner().caption(image))),
        },
    }

    FIXTURES.mkdir(parents=True, exist_ok=True)
    for name, payload in fixtures.items():
        path = FIXTURES / f"{name}.json"
        path.write_text(json.dumps(payload, indent=2) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
