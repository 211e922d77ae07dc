"""Image file IO and PNG wire encoding shared by the CLI and the provider protocol."""

from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(image: np.ndarray) -> np.ndarray:
    """[0,1] float image to rounded uint8; values are clamped here and only here."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / 255.0


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Write a [0,1] float array as PNG: HxWx3 as RGB, HxW as 8-bit grayscale."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(np.asarray(image))).save(path)


def load_image(path: str | Path) -> np.ndarray:
    """Read an image file to float [0,1]; RGBA stays 4-channel, grayscale stays 2-D."""
    with Image.open(path) as img:
        return from_uint8(np.asarray(img))


def load_rgb_over_white(path: str | Path) -> np.ndarray:
    """Read an image and alpha-composite it over a white background, returning HxWx3."""
    arr = load_image(path)
    if arr.ndim == 2:
        return np.repeat(arr[:, :, None], 3, axis=2)
    if arr.shape[2] == 4:
        alpha = arr[:, :, 3:4]
        return arr[:, :, :3] * alpha + (1.0 - alpha)
    return arr[:, :, :3]


def encode_png_b64(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(np.asarray(image))).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png_b64(data: str) -> np.ndarray:
    raw = base64.b64decode(data.encode("ascii"))
    with Image.open(io.BytesIO(raw)) as img:
        return from_uint8(np.asarray(img))


def resize_nearest(array: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize along the first two axes; keeps dtype (so binary
    masks stay binary)."""
    h_out, w_out = shape
    h_in, w_in = array.shape[:2]
    rows = np.minimum((np.arange(h_out) + 0.5) * h_in / h_out, h_in - 1).astype(np.int64)
    cols = np.minimum((np.arange(w_out) + 0.5) * w_in / w_out, w_in - 1).astype(np.int64)
    return array[rows][:, cols]
