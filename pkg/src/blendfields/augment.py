"""Differentiable image augmentation and paired text-template augmentation.

Applied to rendered patches before embedding-provider calls: the original
patch first, then copies through color jitter -> translation -> cutout
followed by a random perspective warp. Every op is differentiable with
respect to the input pixels and reproducible from the generator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources

import torch
import torch.nn.functional as F

from .errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentConfig:
    """Batch size includes the unaugmented original. Jitter/translate/cutout
    magnitudes follow the differential-augmentation convention adapted to
    [0, 1] images; perspective follows the stated distortion scale and
    probability."""

    batch_size: int = 24
    perspective_scale: float = 0.4
    perspective_prob: float = 0.5
    enable_color_jitter: bool = True
    enable_translation: bool = True
    enable_cutout: bool = True
    brightness: float = 0.5
    saturation: float = 2.0
    contrast: float = 0.5
    translation_ratio: float = 0.125
    cutout_ratio: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("augmentation batch size must be >= 1")
        for p in (self.perspective_prob,):
            if not 0.0 <= p <= 1.0:
                raise ValidationError("probabilities must lie in [0, 1]")


def _rand(rng: torch.Generator, *shape) -> torch.Tensor:
    return torch.rand(shape, generator=rng)


def _color_jitter(img: torch.Tensor, cfg: AugmentConfig, rng: torch.Generator) -> torch.Tensor:
    # img [S, S, 3]
    u = _rand(rng, 3).to(img.dtype)
    img = img + (u[0] - 0.5) * cfg.brightness
    mean_c = img.mean(dim=-1, keepdim=True)
    img = (img - mean_c) * (u[1] * cfg.saturation) + mean_c
    mean_all = img.mean()
    img = (img - mean_all) * (u[2] + cfg.contrast) + mean_all
    return img


def _translate(img: torch.Tensor, cfg: AugmentConfig, rng: torch.Generator) -> torch.Tensor:
    size = img.shape[0]
    max_shift = int(round(size * cfg.translation_ratio))
    if max_shift == 0:
        return img
    shifts = torch.randint(-max_shift, max_shift + 1, (2,), generator=rng)
    chw = img.permute(2, 0, 1).unsqueeze(0)
    pad = (max_shift,) * 4
    padded = F.pad(chw, pad, mode="replicate")
    y0 = max_shift + int(shifts[0])
    x0 = max_shift + int(shifts[1])
    return padded[0, :, y0 : y0 + size, x0 : x0 + size].permute(1, 2, 0)


def _cutout(img: torch.Tensor, cfg: AugmentConfig, rng: torch.Generator) -> torch.Tensor:
    size = img.shape[0]
    hole = int(round(size * cfg.cutout_ratio))
    if hole == 0:
        return img
    y0 = int(torch.randint(0, size - hole + 1, (1,), generator=rng))
    x0 = int(torch.randint(0, size - hole + 1, (1,), generator=rng))
    mask = img.new_ones(size, size, 1)
    mask[y0 : y0 + hole, x0 : x0 + hole] = 0.0
    return img * mask


def _perspective_coeffs(src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
    """Homography h (8 coeffs) mapping dst points back to src points."""
    a = torch.zeros(8, 8, dtype=torch.float64)
    b = torch.zeros(8, dtype=torch.float64)
    for i in range(4):
        x, y = dst[i]
        u, v = src[i]
        a[2 * i] = torch.tensor([x, y, 1, 0, 0, 0, -u * x, -u * y], dtype=torch.float64)
        a[2 * i + 1] = torch.tensor([0, 0, 0, x, y, 1, -v * x, -v * y], dtype=torch.float64)
        b[2 * i] = u
        b[2 * i + 1] = v
    return torch.linalg.solve(a, b)


def _perspective(img: torch.Tensor, cfg: AugmentConfig, rng: torch.Generator) -> torch.Tensor:
    size = img.shape[0]
    half = cfg.perspective_scale * size / 2.0
    corners = torch.tensor([[0.0, 0.0], [size - 1.0, 0.0], [size - 1.0, size - 1.0], [0.0, size - 1.0]])
    inward = torch.tensor([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    displaced = corners + inward * _rand(rng, 4, 2) * half
    h = _perspective_coeffs(corners.double(), displaced.double()).to(img.dtype)

    ys = torch.arange(size, dtype=img.dtype)
    xs = torch.arange(size, dtype=img.dtype)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    denom = h[6] * gx + h[7] * gy + 1.0
    src_x = (h[0] * gx + h[1] * gy + h[2]) / denom
    src_y = (h[3] * gx + h[4] * gy + h[5]) / denom
    # grid_sample wants coords in [-1, 1]
    grid = torch.stack([src_x / (size - 1) * 2 - 1, src_y / (size - 1) * 2 - 1], dim=-1).unsqueeze(0)
    chw = img.permute(2, 0, 1).unsqueeze(0)
    warped = F.grid_sample(chw, grid, mode="bilinear", padding_mode="border", align_corners=True)
    return warped[0].permute(1, 2, 0)


def augment_images(patch: torch.Tensor, cfg: AugmentConfig, rng: torch.Generator) -> torch.Tensor:
    """Build the augmentation batch [N, S, S, 3] for one rendered patch.

    Entry 0 is the original; later entries run jitter -> translation ->
    cutout -> perspective with independent draws. Output is clamped to [0, 1].
    """
    if patch.ndim != 3 or patch.shape[2] != 3:
        raise ValidationError(f"augment_images expects [S, S, 3], got {tuple(patch.shape)}")
    batch = [patch]
    for _ in range(cfg.batch_size - 1):
        img = patch
        if cfg.enable_color_jitter:
            img = _color_jitter(img, cfg, rng)
        if cfg.enable_translation:
            img = _translate(img, cfg, rng)
        if cfg.enable_cutout:
            img = _cutout(img, cfg, rng)
        if float(_rand(rng, 1)) < cfg.perspective_prob:
            img = _perspective(img, cfg, rng)
        batch.append(img)
    return torch.stack(batch).clamp(0.0, 1.0)


def augment_texts(
    source_text: str,
    target_text: str,
    templates: list[str],
    rng: torch.Generator,
) -> list[tuple[str, str]]:
    """Apply a random number of randomly selected templates to the text pair.

    Each selected template is applied to both texts, so every output pair
    shares its template. An empty template list passes the pair through
    with a warning.
    """
    if not templates:
        logger.warning("no text templates configured; passing texts through unaugmented")
        return [(source_text, target_text)]
    k = int(torch.randint(1, len(templates) + 1, (1,), generator=rng))
    order = torch.randperm(len(templates), generator=rng)[:k]
    pairs = []
    for idx in order:
        template = templates[int(idx)]
        pairs.append((template.replace("{}", source_text), template.replace("{}", target_text)))
    return pairs


def load_templates(path: str | None = None) -> list[str]:
    """Read templates (one per line, '{}' placeholder); defaults to the packaged list."""
    if path is None:
        text = resources.files("blendfields").joinpath("assets/templates.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    templates = [line.strip() for line in text.splitlines() if line.strip()]
    if not templates:
        logger.warning("template file %s is empty", path or "<packaged>")
    return templates
