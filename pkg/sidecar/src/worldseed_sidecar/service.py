"""FastAPI application wiring the wire protocol to the model registry.

Error mapping: undecodable or inconsistent payloads answer 400, an
endpoint whose model is not loaded answers 503, and a second request
while a model is busy answers 429.  Known pixels of an inpaint request
are composited back over the model output in the byte domain, so a
mask of all ones echoes the request image byte-identically.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import codec
from .config import SidecarConfig
from .models import BUILDERS
from .schemas import (
    CaptionBody,
    CaptionResponse,
    DepthBody,
    DepthResponse,
    InpaintBody,
    InpaintResponse,
)


@dataclass
class ModelSlot:
    """One endpoint's model with its single-flight lock."""

    identifier: str
    instance: object | None = None
    lock: threading.Lock = None

    def __post_init__(self):
        if self.lock is None:
            self.lock = threading.Lock()

    def load(self):
        builder = BUILDERS.get(self.identifier)
        self.instance = builder() if builder is not None else None


class Registry:
    """The three endpoint slots, loadable independently."""

    def __init__(self, config: SidecarConfig):
        self.inpaint = ModelSlot(config.inpaint_model)
        self.depth = ModelSlot(config.depth_model)
        self.caption = ModelSlot(config.caption_model)

    def load_all(self):
        for slot in (self.inpaint, self.depth, self.caption):
            slot.load()

    def slots(self) -> dict:
        return {"inpaint": self.inpaint, "depth": self.depth,
                "caption": self.caption}


def _acquire(slot: ModelSlot) -> None:
    if slot.instance is None:
        raise HTTPException(status_code=503,
                            detail=f"model {slot.identifier!r} is not ready")
    if not slot.lock.acquire(blocking=False):
        raise HTTPException(status_code=429,
                            detail=f"model {slot.identifier!r} is busy")


def _decode_image(payload: str, max_side: int) -> np.ndarray:
    try:
        image = codec.decode_image_b64(payload)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    if max(image.shape[:2]) > max_side:
        raise HTTPException(
            status_code=400,
            detail=f"image side exceeds the configured limit of {max_side}")
    return image


def create_app(config: SidecarConfig | None = None,
               warm: bool = True) -> FastAPI:
    """Build the service; ``warm=False`` leaves every model unloaded so
    endpoints answer 503 until ``app.state.registry.load_all()`` runs."""
    config = config or SidecarConfig()
    registry = Registry(config)
    if warm:
        registry.load_all()

    app = FastAPI(title="worldseed-sidecar",
                  description="Inference backends for single-image scene "
                              "growth: inpainting, metric depth, captioning.",
                  version="0.1.0",
                  openapi_url="/spec")
    app.state.config = config
    app.state.registry = registry

    @app.exception_handler(RequestValidationError)
    def malformed_request(request, exc):
        return JSONResponse(status_code=400,
                            content={"detail": f"malformed request: {exc}"})

    @app.post("/inpaint", response_model=InpaintResponse)
    def inpaint(body: InpaintBody):
        slot = registry.inpaint
        _acquire(slot)
        try:
            image = _decode_image(body.image, config.max_side)
            try:
                mask = codec.decode_mask_b64(body.mask)
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
            if mask.shape != image.shape[:2]:
                raise HTTPException(status_code=400,
                                    detail="image and mask dimensions differ")
            if not mask.any():
                raise HTTPException(status_code=400,
                                    detail="mask has no known pixels")
            conditioning = None
            if body.normalized_depth is not None:
                try:
                    conditioning = codec.decode_raster(
                        body.normalized_depth.model_dump())
                except ValueError as exc:
                    raise HTTPException(status_code=400,
                                        detail=str(exc)) from exc
                if conditioning.shape != mask.shape:
                    raise HTTPException(
                        status_code=400,
                        detail="normalized_depth dimensions differ")
                if conditioning.min() < 0.0 or conditioning.max() > 1.0:
                    raise HTTPException(
                        status_code=400,
                        detail="normalized_depth must lie in [0, 1]")
            if mask.all():
                return {"image": body.image}
            filled = slot.instance.inpaint(image, mask, body.prompt,
                                           conditioning)
            out = np.clip(np.rint(filled * 255.0), 0, 255).astype(np.uint8)
            composited = np.where(mask[..., None], image, out)
            return {"image": codec.encode_image_b64(composited)}
        finally:
            slot.lock.release()

    @app.post("/depth", response_model=DepthResponse)
    def depth(body: DepthBody):
        slot = registry.depth
        _acquire(slot)
        try:
            image = _decode_image(body.image, config.max_side)
            estimate = slot.instance.estimate(image)
            scale = float(estimate.max())
            return {"depth": codec.encode_raster(estimate / scale),
                    "scale": scale}
        finally:
            slot.lock.release()

    @app.post("/caption", response_model=CaptionResponse)
    def caption(body: CaptionBody):
        slot = registry.caption
        _acquire(slot)
        try:
            image = _decode_image(body.image, config.max_side)
            category, colors = slot.instance.caption(image)
            return {"category": category, "colors": colors}
        finally:
            slot.lock.release()

    @app.get("/healthz")
    def healthz():
        slots = registry.slots()
        return {"ready": all(s.instance is not None for s in slots.values()),
                "models": {name: {"identifier": s.identifier,
                                  "loaded": s.instance is not None}
                           for name, s in slots.items()}}

    return app
