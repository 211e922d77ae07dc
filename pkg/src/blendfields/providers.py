"""Segmentation and embedding providers: deterministic mocks and remote HTTP clients.

Mocks make the whole pipeline runnable and testable offline; the remote
clients speak the provider protocol served by :mod:`blendfields.server`
(or any deployment implementing it).
"""

from __future__ import annotations

import hashlib
from typing import Protocol, runtime_checkable

import numpy as np
import torch

from .errors import ProviderError, ValidationError
from .imageio import encode_png_b64

COLOR_WORDS = {
    "red": (0.9, 0.15, 0.1),
    "green": (0.15, 0.8, 0.2),
    "blue": (0.15, 0.25, 0.9),
    "yellow": (0.9, 0.85, 0.1),
    "orange": (0.95, 0.55, 0.1),
    "purple": (0.55, 0.15, 0.8),
    "pink": (0.95, 0.5, 0.7),
    "brown": (0.55, 0.35, 0.15),
    "white": (0.98, 0.98, 0.98),
    "black": (0.05, 0.05, 0.05),
    "gray": (0.5, 0.5, 0.5),
    "grey": (0.5, 0.5, 0.5),
    "cyan": (0.1, 0.85, 0.9),
    "magenta": (0.9, 0.1, 0.85),
}

# Exact-text queries with fixed colors; "photo" is the neutral baseline used
# by the target-region rule and must not match inside longer prompts.
EXACT_TEXT_COLORS = {"photo": (0.5, 0.5, 0.5)}


def text_to_rgb(text: str) -> np.ndarray:
    """Deterministic text -> RGB lookup: exact baseline texts first, then the
    first color word in the prompt, else a stable hash-derived pseudo-color."""
    normalized = text.strip().lower()
    if normalized in EXACT_TEXT_COLORS:
        return np.asarray(EXACT_TEXT_COLORS[normalized], dtype=np.float32)
    for word in normalized.replace(",", " ").split():
        if word in COLOR_WORDS:
            return np.asarray(COLOR_WORDS[word], dtype=np.float32)
    digest = hashlib.md5(text.encode()).digest()
    return np.asarray([b / 255.0 for b in digest[:3]], dtype=np.float32)


@runtime_checkable
class SegmentationProvider(Protocol):
    """Maps (image, text) to a per-pixel probability map at a fixed resolution."""

    resolution: int

    def segment(self, image: np.ndarray, text: str) -> np.ndarray: ...


@runtime_checkable
class EmbeddingProvider(Protocol):
    """Maps images and texts to unit vectors of a shared dimension.

    ``supports_gradients`` marks providers whose image embeddings are
    differentiable torch functions (required for editing)."""

    dim: int
    supports_gradients: bool

    def embed_image(self, images: torch.Tensor) -> torch.Tensor: ...

    def embed_text(self, text: str) -> torch.Tensor: ...


class ColorProximitySegmenter:
    """Geometric mock segmenter: probability falls off with RGB distance to the
    text's lookup color, so a colored object is tracked across rendered views."""

    def __init__(self, resolution: int = 352, sharpness: float = 0.35):
        self.resolution = resolution
        self.sharpness = sharpness

    def segment(self, image: np.ndarray, text: str) -> np.ndarray:
        image = np.asarray(image, dtype=np.float32)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ProviderError(f"segmenter expects HxWx3, got {image.shape}")
        target = text_to_rgb(text)
        dist_sq = ((image - target) ** 2).sum(axis=2)
        return np.exp(-dist_sq / (2.0 * self.sharpness**2))


class FixedDiskSegmenter:
    """Mock with known ground truth: probability 1 inside a disk for any text
    except the baseline text, which maps to all zeros."""

    def __init__(self, resolution: int = 352, center: tuple[float, float] = (0.5, 0.5), radius: float = 0.25, baseline_text: str = "photo"):
        self.resolution = resolution
        self.center = center
        self.radius = radius
        self.baseline_text = baseline_text

    def disk(self, shape: tuple[int, int]) -> np.ndarray:
        h, w = shape
        ys = (np.arange(h) + 0.5) / h
        xs = (np.arange(w) + 0.5) / w
        cy, cx = self.center[1], self.center[0]
        dist = np.sqrt((ys[:, None] - cy) ** 2 + (xs[None, :] - cx) ** 2)
        return (dist <= self.radius).astype(np.float32)

    def segment(self, image: np.ndarray, text: str) -> np.ndarray:
        shape = image.shape[:2]
        if text == self.baseline_text:
            return np.zeros(shape, dtype=np.float32)
        return self.disk(shape)


class ColorStatisticsEmbedder:
    """Deterministic mock embedder: images embed to their unit-normalized mean
    RGB, texts to their lookup RGB, each anchored by a constant component so no
    embedding can be zero-norm. Image embeddings are differentiable."""

    dim = 4
    supports_gradients = True
    _anchor = 0.5

    def embed_image(self, images: torch.Tensor) -> torch.Tensor:
        if images.shape[-1] != 3:
            raise ProviderError(f"embedder expects channels-last RGB, got shape {tuple(images.shape)}")
        mean_rgb = images.mean(dim=(-3, -2))
        anchored = torch.cat([mean_rgb, torch.full_like(mean_rgb[..., :1], self._anchor)], dim=-1)
        return anchored / torch.linalg.vector_norm(anchored, dim=-1, keepdim=True)

    def embed_text(self, text: str) -> torch.Tensor:
        rgb = torch.from_numpy(text_to_rgb(text))
        anchored = torch.cat([rgb, torch.tensor([self._anchor])])
        return anchored / torch.linalg.vector_norm(anchored)


def _check_probability_grid(grid: np.ndarray, resolution: int) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float32)
    if grid.shape != (resolution, resolution):
        raise ProviderError(f"provider returned grid of shape {grid.shape}, declared resolution {resolution}")
    if not np.isfinite(grid).all() or grid.min() < 0.0 or grid.max() > 1.0:
        raise ProviderError("provider probabilities must be finite and in [0, 1]")
    return grid


class RemoteSegmentationProvider:
    """Client for the HTTP provider protocol: PNG-encoded image + text in,
    probability grid out. Pass an ``httpx.Client``-compatible object (the
    FastAPI test client works) or a base URL."""

    def __init__(self, base_url: str | None = None, client=None):
        if client is None:
            if base_url is None:
                raise ValidationError("remote provider needs a base_url or a client")
            import httpx

            client = httpx.Client(base_url=base_url, timeout=30.0)
        self._client = client
        self.resolution = int(self._get_info()["segmentation_resolution"])

    def _get_info(self) -> dict:
        resp = self._client.get("/info")
        if resp.status_code != 200:
            raise ProviderError(f"provider /info failed with status {resp.status_code}")
        return resp.json()

    def segment(self, image: np.ndarray, text: str) -> np.ndarray:
        payload = {"image_png": encode_png_b64(image), "text": text}
        resp = self._client.post("/segment", json=payload)
        if resp.status_code != 200:
            raise ProviderError(f"segmentation request failed with status {resp.status_code}: {resp.text[:200]}")
        return _check_probability_grid(np.asarray(resp.json()["probabilities"]), self.resolution)


def make_segmentation_provider(name: str, url: str | None = None, client=None) -> SegmentationProvider:
    if name == "mock":
        return ColorProximitySegmenter()
    if name == "disk":
        return FixedDiskSegmenter()
    if name == "remote":
        return RemoteSegmentationProvider(base_url=url, client=client)
    raise ValidationError(f"unknown segmentation provider {name!r}")


def make_embedding_provider(name: str, url: str | None = None, client=None) -> EmbeddingProvider:
    if name == "mock":
        return ColorStatisticsEmbedder()
    if name == "remote":
        return RemoteEmbeddingProvider(base_url=url, client=client)
    raise ValidationError(f"unknown embedding provider {name!r}")


class RemoteEmbeddingProvider:
    """Client for the embedding side of the provider protocol.

    Not differentiable (embeddings cross an HTTP boundary), so it is valid
    for evaluation but rejected for editing.
    """

    supports_gradients = False

    def __init__(self, base_url: str | None = None, client=None):
        if client is None:
            if base_url is None:
                raise ValidationError("remote provider needs a base_url or a client")
            import httpx

            client = httpx.Client(base_url=base_url, timeout=30.0)
        self._client = client
        resp = self._client.get("/info")
        if resp.status_code != 200:
            raise ProviderError(f"provider /info failed with status {resp.status_code}")
        self.dim = int(resp.json()["embedding_dim"])

    def _unit(self, values: list) -> torch.Tensor:
        vec = torch.as_tensor(values, dtype=torch.float32)
        if vec.shape != (self.dim,):
            raise ProviderError(f"provider returned embedding of shape {tuple(vec.shape)}, declared dim {self.dim}")
        norm = torch.linalg.vector_norm(vec)
        if not torch.isfinite(norm) or norm < 1e-8:
            raise ProviderError("provider returned a zero-norm embedding")
        return vec / norm

    def embed_image(self, images: torch.Tensor) -> torch.Tensor:
        arr = images.detach().cpu().numpy()
        if arr.ndim == 3:
            batch = arr[None]
            squeeze = True
        else:
            batch = arr.reshape(-1, *arr.shape[-3:])
            squeeze = False
        out = []
        for img in batch:
            resp = self._client.post("/embed/image", json={"image_png": encode_png_b64(img)})
            if resp.status_code != 200:
                raise ProviderError(f"image embedding failed with status {resp.status_code}")
            out.append(self._unit(resp.json()["embedding"]))
        stacked = torch.stack(out)
        if squeeze:
            return stacked[0]
        return stacked.reshape(*images.shape[:-3], self.dim)

    def embed_text(self, text: str) -> torch.Tensor:
        resp = self._client.post("/embed/text", json={"text": text})
        if resp.status_code != 200:
            raise ProviderError(f"text embedding failed with status {resp.status_code}")
        return self._unit(resp.json()["embedding"])
