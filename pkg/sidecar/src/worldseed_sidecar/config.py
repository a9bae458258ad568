"""Service configuration: which model serves each endpoint, and limits."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

DEFAULT_PORT = 8710
MIN_MAX_SIDE = 64


@dataclass(frozen=True)
class SidecarConfig:
    """Model identifiers per endpoint plus transport limits.

    The reference models run on the CPU only; a GPU-backed model would
    register its own builder and accept other ``device`` values.
    """

    inpaint_model: str = "nearest-field-v0"
    depth_model: str = "shaded-prior-v0"
    caption_model: str = "palette-vote-v0"
    device: str = "cpu"
    max_side: int = 1024
    port: int = DEFAULT_PORT

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port must lie in [1, 65535], got {self.port}")
        if self.max_side < MIN_MAX_SIDE:
            raise ValueError(
                f"max_side must be at least {MIN_MAX_SIDE}, got {self.max_side}")
        if self.device != "cpu":
            raise ValueError(
                f"reference models only support device 'cpu', got {self.device!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SidecarConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def load_config(path) -> SidecarConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot load sidecar config {path}: {exc}") from exc
    return SidecarConfig.from_dict(data)
