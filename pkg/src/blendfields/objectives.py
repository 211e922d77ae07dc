"""The text-driven and localized-editing losses, threshold annealing, and the
gradient-routing contract for the localized terms.

Routing contract: the localized losses (region, opacity, regularization) read
the routed accumulated-opacity patches produced by
:func:`blendfields.compositing.composite_blended` with ``route_gradients=True``.
Inside those patches the added channel backpropagates only into the editable
density, the removed channel only into the density blend ratio, and the
changed channel only into the color blend ratio; every other factor is
detached. The text-driven losses are unrestricted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from .errors import ProviderError, ValidationError
from .localizer import RegionMasks
from .providers import EmbeddingProvider

logger = logging.getLogger(__name__)

DEGENERATE_DIRECTION_EPS = 1e-6
ENTROPY_CLAMP_EPS = 1e-6

# Which editable quantity receives gradients from each opacity channel.
ROUTING = {"add": "density", "remove": "density_blend", "change": "color_blend"}


@dataclass(frozen=True)
class LossWeights:
    """Balance factors: lambda_global inside the text objective, lambda_1..3
    for the region / opacity / regularization terms."""

    lambda_global: float = 0.5
    lambda_1: float = 1.0
    lambda_2: float = 2.0
    lambda_3: float = 0.2

    def __post_init__(self):
        values = (self.lambda_global, self.lambda_1, self.lambda_2, self.lambda_3)
        if any(not (v >= 0.0) for v in values):
            raise ValidationError("loss weights must be finite and nonnegative")


@dataclass(frozen=True)
class AnnealSchedule:
    start: float
    target: float
    steps: int

    def __post_init__(self):
        if not (0.0 <= self.start <= 1.0 and 0.0 <= self.target <= 1.0):
            raise ValidationError("anneal endpoints must lie in [0, 1]")
        if self.steps < 0:
            raise ValidationError("anneal steps must be >= 0")


def anneal(schedule: AnnealSchedule, step: int) -> float:
    """Linear interpolation start -> target over the schedule, constant after."""
    if schedule.steps <= 0:
        return schedule.target
    t = min(max(step, 0) / schedule.steps, 1.0)
    return schedule.start + (schedule.target - schedule.start) * t


@dataclass(frozen=True)
class OpacityThresholds:
    """Per-channel opacity caps. add and change anneal; remove stays fixed."""

    add: AnnealSchedule = AnnealSchedule(start=0.8, target=0.2, steps=100)
    change: AnnealSchedule = AnnealSchedule(start=0.5, target=0.2, steps=100)
    remove: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.remove <= 1.0:
            raise ValidationError("remove threshold must lie in [0, 1]")

    def at_step(self, step: int) -> dict[str, float]:
        return {"add": anneal(self.add, step), "remove": self.remove, "change": anneal(self.change, step)}


def _cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a * b).sum(dim=-1) / (
        torch.linalg.vector_norm(a, dim=-1) * torch.linalg.vector_norm(b, dim=-1)
    ).clamp_min(1e-12)


def _checked_embedding(vec: torch.Tensor) -> torch.Tensor:
    norms = torch.linalg.vector_norm(vec, dim=-1)
    if (norms < 1e-8).any():
        raise ProviderError("embedding provider returned a zero-norm vector")
    return vec


def global_clip_loss(image: torch.Tensor, text: str, provider: EmbeddingProvider) -> torch.Tensor:
    """Cosine distance between the image embedding and the text embedding, in [0, 2]."""
    img = _checked_embedding(provider.embed_image(image))
    txt = _checked_embedding(provider.embed_text(text))
    return 1.0 - _cosine(img, txt)


def directional_clip_loss(
    image_target: torch.Tensor,
    text_target: str,
    image_source: torch.Tensor,
    text_source: str,
    provider: EmbeddingProvider,
) -> torch.Tensor:
    """Cosine distance between the image-change and text-change directions.

    Degenerate directions (norm below eps) contribute 0 with a warning.
    """
    delta_img = provider.embed_image(image_target) - provider.embed_image(image_source)
    delta_txt = provider.embed_text(text_target) - provider.embed_text(text_source)
    if (
        torch.linalg.vector_norm(delta_img, dim=-1).min() <= DEGENERATE_DIRECTION_EPS
        or torch.linalg.vector_norm(delta_txt, dim=-1).min() <= DEGENERATE_DIRECTION_EPS
    ):
        logger.warning("degenerate embedding direction; directional loss contributes 0")
        return torch.zeros(())
    return 1.0 - _cosine(delta_img, delta_txt)


def _mean_text_embedding(texts: list[str], provider: EmbeddingProvider) -> torch.Tensor:
    stacked = torch.stack([_checked_embedding(provider.embed_text(t)) for t in texts])
    mean = stacked.mean(dim=0)
    norm = torch.linalg.vector_norm(mean)
    if norm < 1e-8:
        raise ProviderError("augmented text embeddings cancel out; cannot ensemble")
    return mean / norm


def clip_objective(
    images_original: torch.Tensor,
    images_editable: torch.Tensor,
    images_blended: torch.Tensor,
    source_texts: list[str],
    target_texts: list[str],
    provider: EmbeddingProvider,
    lambda_global: float = 0.5,
) -> torch.Tensor:
    """Text-driven objective over an augmentation batch.

    Images are aligned [N, S, S, 3] batches. Text embeddings are ensembled
    (mean of the augmented batch, renormalized); the directional term plus
    lambda_global times the two global terms is averaged over the image batch.
    """
    if len(source_texts) != len(target_texts) or not source_texts:
        raise ValidationError("text batches must be nonempty and paired")
    emb_original = _checked_embedding(provider.embed_image(images_original))
    emb_editable = _checked_embedding(provider.embed_image(images_editable))
    emb_blended = _checked_embedding(provider.embed_image(images_blended))
    txt_source = _mean_text_embedding(source_texts, provider)
    txt_target = _mean_text_embedding(target_texts, provider)

    global_blended = 1.0 - _cosine(emb_blended, txt_target)
    global_editable = 1.0 - _cosine(emb_editable, txt_target)

    delta_img = emb_blended - emb_original
    delta_txt = txt_target - txt_source
    img_norms = torch.linalg.vector_norm(delta_img, dim=-1)
    txt_norm = torch.linalg.vector_norm(delta_txt)
    if txt_norm <= DEGENERATE_DIRECTION_EPS:
        logger.warning("source and target text embeddings coincide; directional loss contributes 0")
        directional = torch.zeros_like(global_blended)
    else:
        directional = torch.where(
            img_norms > DEGENERATE_DIRECTION_EPS,
            1.0 - _cosine(delta_img, delta_txt.expand_as(delta_img)),
            torch.zeros_like(img_norms),
        )
    return (directional + lambda_global * (global_blended + global_editable)).mean()


def _masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    count = mask.sum()
    if count <= 0:
        return values.new_zeros(())
    return (values * mask).sum() / count


def region_loss(
    opacity_add: torch.Tensor,
    opacity_remove: torch.Tensor,
    opacity_change: torch.Tensor,
    masks: RegionMasks,
) -> torch.Tensor:
    """Push the summed opacities to 0 on the negative region and to 1 on the
    positive region (weighted by lambda_plus). Each term is the mean of squared
    error over its own mask's pixels; an empty mask contributes 0."""
    e_sum = opacity_add + opacity_remove + opacity_change
    if e_sum.shape != masks.positive.shape:
        raise ValidationError(f"opacity patches {tuple(e_sum.shape)} do not match masks {masks.positive.shape}")
    negative = _masked_mean(e_sum**2, masks.negative_tensor())
    positive = _masked_mean((1.0 - e_sum) ** 2, masks.positive_tensor())
    return negative + masks.lambda_plus * positive


def opacity_loss(
    opacities: dict[str, torch.Tensor],
    thresholds: dict[str, float],
    enabled_ops: frozenset,
) -> torch.Tensor:
    """Sum over enabled channels of max(threshold, mean opacity); a channel mean
    below its threshold contributes the constant threshold (zero gradient)."""
    total = torch.zeros(())
    for channel in sorted(enabled_ops):
        tau = thresholds[channel]
        total = total + torch.maximum(torch.as_tensor(tau, dtype=torch.float32), opacities[channel].mean())
    return total


def reg_loss(opacity_add: torch.Tensor, eps: float = ENTROPY_CLAMP_EPS) -> torch.Tensor:
    """Negative mean binary entropy of the added-opacity patch, in [0, 1];
    pushes added density toward fully-on or fully-off."""
    z = opacity_add.clamp(eps, 1.0 - eps)
    entropy = z * torch.log2(z) + (1.0 - z) * torch.log2(1.0 - z)
    return -entropy.mean()


def total_loss(
    clip_term: torch.Tensor,
    region_term: torch.Tensor,
    opacity_term: torch.Tensor,
    reg_term: torch.Tensor,
    weights: LossWeights,
    reg_active: bool = True,
) -> torch.Tensor:
    """clip + l1 * region + l2 * opacity + l3 * reg; the reg term only counts
    once its activation step has passed (the caller decides ``reg_active``)."""
    total = clip_term + weights.lambda_1 * region_term + weights.lambda_2 * opacity_term
    if reg_active:
        total = total + weights.lambda_3 * reg_term
    return total
