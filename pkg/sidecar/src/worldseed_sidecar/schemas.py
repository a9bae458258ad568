"""Request and response bodies for the wire protocol."""

from __future__ import annotations

from pydantic import BaseModel, Field


class RasterPayload(BaseModel):
    """Base64 little-endian float32 rows, row-major."""

    data: str
    width: int = Field(gt=0)
    height: int = Field(gt=0)


class InpaintBody(BaseModel):
    image: str
    mask: str
    prompt: str = ""
    normalized_depth: RasterPayload | None = None


class InpaintResponse(BaseModel):
    image: str


class DepthBody(BaseModel):
    image: str


class DepthResponse(BaseModel):
    depth: RasterPayload
    scale: float = Field(gt=0)


class CaptionBody(BaseModel):
    image: str


class CaptionResponse(BaseModel):
    category: str = Field(min_length=1)
    colors: list[str] = Field(min_length=1)


BODY_SCHEMAS = {
    "/inpaint": (InpaintBody, InpaintResponse),
    "/depth": (DepthBody, DepthResponse),
    "/caption": (CaptionBody, CaptionResponse),
}
