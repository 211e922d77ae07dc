"""Editing metrics: pixel preservation, text alignment, and their product."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ValidationError
from .providers import EmbeddingProvider

logger = logging.getLogger(__name__)

DEGENERATE_DIRECTION_EPS = 1e-6


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse <= 0:
        return math.inf
    return -10.0 * math.log10(mse)


def manipulative_precision(d_l1: float, s_clip: float) -> float:
    """(1 - D_L1) * S_CLIP: text alignment discounted by how much of the
    original appearance was given up."""
    return (1.0 - d_l1) * s_clip


@dataclass
class MetricReport:
    """Aggregate metrics plus the per-view breakdown they came from.

    d_l1 and s_clip are per-view means; mp_clip is exactly
    (1 - d_l1) * s_clip of those means.
    """

    d_l1: float
    s_clip: float
    mp_clip: float
    per_view: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.d_l1 <= 1.0:
            raise ValidationError(f"d_l1 must lie in [0, 1], got {self.d_l1}")
        if abs(self.mp_clip - manipulative_precision(self.d_l1, self.s_clip)) > 1e-9:
            raise ValidationError("mp_clip is inconsistent with its factors")

    def to_dict(self) -> dict:
        return {"d_l1": self.d_l1, "s_clip": self.s_clip, "mp_clip": self.mp_clip, "per_view": self.per_view}

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def _cos(a: torch.Tensor, b: torch.Tensor) -> float:
    na = torch.linalg.vector_norm(a)
    nb = torch.linalg.vector_norm(b)
    if na <= DEGENERATE_DIRECTION_EPS or nb <= DEGENERATE_DIRECTION_EPS:
        logger.warning("degenerate direction in metric cosine; similarity set to 0")
        return 0.0
    return float((a * b).sum() / (na * nb))


def evaluate(
    originals: list[np.ndarray],
    edited: list[np.ndarray],
    source_text: str,
    target_text: str,
    provider: EmbeddingProvider,
) -> MetricReport:
    """Score paired original/edited views.

    Per view: pixel distance mean|orig - edit|; text alignment cos(E(edit),
    E(target)); direction alignment cos(E(edit) - E(orig), E(target) -
    E(source)); their mean; and the per-view precision (1 - d) * s. The
    report aggregates per-view means with mp = (1 - mean d) * (mean s).
    """
    if len(originals) != len(edited) or not originals:
        raise ValidationError(f"evaluate needs matching nonempty view lists, got {len(originals)} vs {len(edited)}")

    txt_target = provider.embed_text(target_text)
    txt_source = provider.embed_text(source_text)
    delta_txt = txt_target - txt_source

    per_view: dict[str, list[float]] = {"d_l1": [], "clip_similarity": [], "directional_similarity": [], "s_clip": [], "mp_clip": []}
    for orig, edit in zip(originals, edited):
        orig = np.asarray(orig, dtype=np.float32)
        edit = np.asarray(edit, dtype=np.float32)
        if orig.shape != edit.shape:
            raise ValidationError(f"paired views differ in shape: {orig.shape} vs {edit.shape}")
        d = float(np.mean(np.abs(orig - edit)))
        emb_edit = provider.embed_image(torch.from_numpy(edit))
        emb_orig = provider.embed_image(torch.from_numpy(orig))
        clip_sim = _cos(emb_edit, txt_target)
        dir_sim = _cos(emb_edit - emb_orig, delta_txt)
        s = 0.5 * (clip_sim + dir_sim)
        per_view["d_l1"].append(d)
        per_view["clip_similarity"].append(clip_sim)
        per_view["directional_similarity"].append(dir_sim)
        per_view["s_clip"].append(s)
        per_view["mp_clip"].append(manipulative_precision(d, s))

    d_l1 = float(np.mean(per_view["d_l1"]))
    s_clip = float(np.mean(per_view["s_clip"]))
    return MetricReport(d_l1=d_l1, s_clip=s_clip, mp_clip=manipulative_precision(d_l1, s_clip), per_view=per_view)
