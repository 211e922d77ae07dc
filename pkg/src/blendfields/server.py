"""Reference HTTP service for the remote provider protocol.

Serves any segmentation/embedding provider pair over the wire format the
remote clients in :mod:`blendfields.providers` consume: PNG-encoded images in,
probability grids or embeddings out. Run it with
``uvicorn blendfields.server:app`` (mock-backed by default) or build an app
around other providers with :func:`create_app`.
"""

from __future__ import annotations

import numpy as np
import torch
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .errors import ProviderError
from .imageio import decode_png_b64
from .providers import ColorProximitySegmenter, ColorStatisticsEmbedder, EmbeddingProvider, SegmentationProvider

PROTOCOL_VERSION = 1


class InfoResponse(BaseModel):
    protocol_version: int
    segmentation_resolution: int
    embedding_dim: int


class SegmentRequest(BaseModel):
    image_png: str
    text: str


class SegmentResponse(BaseModel):
    probabilities: list[list[float]]


class EmbedImageRequest(BaseModel):
    image_png: str


class EmbedTextRequest(BaseModel):
    text: str


class EmbedResponse(BaseModel):
    embedding: list[float]


def create_app(
    segmentation: SegmentationProvider | None = None,
    embedding: EmbeddingProvider | None = None,
) -> FastAPI:
    segmentation = segmentation or ColorProximitySegmenter()
    embedding = embedding or ColorStatisticsEmbedder()
    app = FastAPI(title="blendfields provider service")

    @app.get("/info", response_model=InfoResponse)
    def info() -> InfoResponse:
        return InfoResponse(
            protocol_version=PROTOCOL_VERSION,
            segmentation_resolution=segmentation.resolution,
            embedding_dim=embedding.dim,
        )

    @app.post("/segment", response_model=SegmentResponse)
    def segment(request: SegmentRequest) -> SegmentResponse:
        try:
            image = _decode_rgb(request.image_png)
            grid = np.asarray(segmentation.segment(image, request.text), dtype=np.float64)
        except (ProviderError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return SegmentResponse(probabilities=grid.tolist())

    @app.post("/embed/image", response_model=EmbedResponse)
    def embed_image(request: EmbedImageRequest) -> EmbedResponse:
        try:
            image = _decode_rgb(request.image_png)
            vec = embedding.embed_image(torch.from_numpy(image))
        except (ProviderError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return EmbedResponse(embedding=[float(v) for v in vec])

    @app.post("/embed/text", response_model=EmbedResponse)
    def embed_text(request: EmbedTextRequest) -> EmbedResponse:
        vec = embedding.embed_text(request.text)
        return EmbedResponse(embedding=[float(v) for v in vec])

    return app


def _decode_rgb(image_png: str) -> np.ndarray:
    image = decode_png_b64(image_png)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    return image[:, :, :3].astype(np.float32)


app = create_app()
