"""Patch-of-rays sampling and depth sampling along rays (stratified and importance)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from .cameras import CameraModel, rays_for_pixels
from .errors import ValidationError

logger = logging.getLogger(__name__)

MIN_DELTA = 1e-10


@dataclass
class RayPatch:
    """An SxS grid of rays cut from a camera's image plane.

    origins/directions [S, S, 3]; pixels [S, S, 2] as (column, row) indices;
    depth bounds shared by all rays. ``depths`` [S, S, K] is attached by the
    renderer per pass.
    """

    origins: torch.Tensor
    directions: torch.Tensor
    pixels: torch.Tensor
    near: float
    far: float
    depths: torch.Tensor | None = None

    def __post_init__(self):
        if not self.near < self.far:
            raise ValidationError(f"depth bounds must satisfy near < far, got [{self.near}, {self.far}]")

    @property
    def patch_size(self) -> int:
        return self.origins.shape[0]

    def deltas(self) -> torch.Tensor:
        """Distances between consecutive depth samples; the last one is capped
        at the remaining distance to ``far``. Always positive."""
        if self.depths is None:
            raise ValidationError("no depth samples attached to this patch")
        return deltas_from_depths(self.depths, self.far)


def deltas_from_depths(depths: torch.Tensor, far: float) -> torch.Tensor:
    gaps = depths[..., 1:] - depths[..., :-1]
    last = (far - depths[..., -1:])
    return torch.cat([gaps, last], dim=-1).clamp_min(MIN_DELTA)


def sample_patch_rays(cam: CameraModel, patch_size: int, rng: torch.Generator, near: float, far: float) -> RayPatch:
    """Evenly strided SxS pixel grid with a uniformly random start per axis.

    Per axis of length N: start ~ U{0, ..., floor(N/S) + (N mod S) - 1} and
    stride floor(N/S), which always keeps the last index inside the image.
    """
    W, H, S = cam.width, cam.height, patch_size
    if S > W or S > H:
        raise ValidationError(f"patch size {S} exceeds image dimensions {W}x{H}")
    stride_x, stride_y = W // S, H // S
    start_x = int(torch.randint(0, stride_x + W % S, (1,), generator=rng))
    start_y = int(torch.randint(0, stride_y + H % S, (1,), generator=rng))
    xs = start_x + torch.arange(S) * stride_x
    ys = start_y + torch.arange(S) * stride_y
    py, px = torch.meshgrid(ys, xs, indexing="ij")
    origins, directions = rays_for_pixels(cam, px, py)
    return RayPatch(
        origins=origins,
        directions=directions,
        pixels=torch.stack([px, py], dim=-1),
        near=near,
        far=far,
    )


def full_image_pixels(cam: CameraModel) -> tuple[torch.Tensor, torch.Tensor]:
    """Pixel grid covering the whole image plane with stride 1."""
    ys = torch.arange(cam.height)
    xs = torch.arange(cam.width)
    py, px = torch.meshgrid(ys, xs, indexing="ij")
    return px, py


def stratified_depths(
    near: float,
    far: float,
    count: int,
    batch_shape: tuple[int, ...],
    rng: torch.Generator | None = None,
    deterministic: bool = False,
) -> torch.Tensor:
    """One depth per bin of the uniform partition of [near, far] into ``count`` bins."""
    edges = torch.linspace(near, far, count + 1)
    lower, upper = edges[:-1], edges[1:]
    if deterministic:
        offsets = torch.full(batch_shape + (count,), 0.5)
    else:
        offsets = torch.rand(batch_shape + (count,), generator=rng)
    return lower + offsets * (upper - lower)


def importance_depths(
    bin_edges: torch.Tensor,
    weights: torch.Tensor,
    count: int,
    rng: torch.Generator | None = None,
    deterministic: bool = False,
) -> torch.Tensor:
    """Inverse-CDF resampling of depths from per-bin weights.

    bin_edges [B+1] (shared), weights [..., B] nonnegative. Rays whose
    weights sum to zero fall back to stratified sampling (logged once per call).
    """
    if (weights < 0).any():
        raise ValidationError("importance sampling requires nonnegative weights")
    weights = weights.detach()
    totals = weights.sum(dim=-1, keepdim=True)
    degenerate = totals.squeeze(-1) <= 0
    if degenerate.any():
        # Routine for empty-sky rays once a scene has converged, so not a warning.
        logger.debug("importance weights sum to zero for %d rays; falling back to stratified", int(degenerate.sum()))
    near, far = float(bin_edges[0]), float(bin_edges[-1])
    uniform_pdf = torch.full_like(weights, 1.0 / weights.shape[-1])
    pdf = torch.where(degenerate.unsqueeze(-1), uniform_pdf, weights / totals.clamp_min(1e-12))

    cdf = torch.cumsum(pdf, dim=-1)
    cdf = torch.cat([torch.zeros_like(cdf[..., :1]), cdf], dim=-1)  # [..., B+1]

    if deterministic:
        u = torch.linspace(0.0, 1.0, count + 2)[1:-1].expand(weights.shape[:-1] + (count,))
    else:
        u = torch.rand(weights.shape[:-1] + (count,), generator=rng)
    u = u.contiguous()

    idx = torch.searchsorted(cdf, u, right=True).clamp(1, cdf.shape[-1] - 1)
    cdf_lo = torch.gather(cdf, -1, idx - 1)
    cdf_hi = torch.gather(cdf, -1, idx)
    edges = bin_edges.expand(weights.shape[:-1] + (bin_edges.shape[-1],))
    edge_lo = torch.gather(edges, -1, idx - 1)
    edge_hi = torch.gather(edges, -1, idx)

    span = (cdf_hi - cdf_lo).clamp_min(1e-12)
    frac = (u - cdf_lo) / span
    return (edge_lo + frac * (edge_hi - edge_lo)).clamp(near, far)


def sample_depths(
    near: float,
    far: float,
    count: int,
    rng: torch.Generator | None = None,
    mode: str = "stratified",
    *,
    weights: torch.Tensor | None = None,
    bin_edges: torch.Tensor | None = None,
    batch_shape: tuple[int, ...] = (),
    deterministic: bool = False,
) -> torch.Tensor:
    """Draw ``count`` depths per ray in [near, far].

    stratified: one uniform draw per bin. importance: inverse-CDF draws from
    ``weights`` over ``bin_edges`` (the caller merges them with the coarse
    depths via :func:`merge_depths`).
    """
    if mode == "stratified":
        return stratified_depths(near, far, count, batch_shape, rng, deterministic)
    if mode == "importance":
        if weights is None or bin_edges is None:
            raise ValidationError("importance mode requires weights and bin_edges")
        return importance_depths(bin_edges, weights, count, rng, deterministic)
    raise ValidationError(f"unknown depth sampling mode {mode!r}")


def merge_depths(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Concatenate two depth sets along the sample axis and sort ascending."""
    return torch.sort(torch.cat([a, b], dim=-1), dim=-1).values
