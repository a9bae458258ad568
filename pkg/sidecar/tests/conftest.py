"""Shared fixtures: an in-process service client and tiny test images."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from worldseed_sidecar import create_app
from worldseed_sidecar.codec import encode_image_b64


def gradient_image(height=12, width=10):
    """Deterministic uint8 test card with all three channels varying."""
    rows = np.linspace(0, 255, height, dtype=np.uint8)
    cols = np.linspace(0, 255, width, dtype=np.uint8)
    image = np.zeros((height, width, 3), dtype=np.uint8)
    image[..., 0] = rows[:, None]
    image[..., 1] = cols[None, :]
    image[..., 2] = 128
    return image


def image_payload(image):
    return encode_image_b64(image)


@pytest.fixture(scope="session")
def client():
    with TestClient(create_app()) as c:
        yield c
