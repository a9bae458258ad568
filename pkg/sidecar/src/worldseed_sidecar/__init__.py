"""Inference sidecar for the worldseed pipeline.

Serves the three generative endpoints the pipeline can outsource,
speaking JSON over HTTP with base64-PNG images and float32 rasters:

    POST /inpaint {image, mask, prompt, normalized_depth?} -> {image}
    POST /depth   {image}                                  -> {depth, scale}
    POST /caption {image}                                  -> {category, colors}

Mask polarity is 1 = known pixel, 0 = pixel to fill; known pixels are
composited back over the model output on the server, so they survive
byte-exactly.  The OpenAPI description is served at /spec.

Which model backs each endpoint is configuration, not contract: the
shipped reference models are small deterministic CPU implementations,
and heavyweight generative models slot in by registering a new builder
under their identifier.
"""

from .config import SidecarConfig
from .service import create_app

__version__ = "0.1.0"

__all__ = ["SidecarConfig", "create_app", "__version__"]
