"""Target-region masks: text-driven segmentation, dilation, and user-mask mixing."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .cameras import CameraModel
from .errors import ValidationError
from .imageio import load_image, resize_nearest
from .providers import SegmentationProvider

logger = logging.getLogger(__name__)

DILATION_KERNEL = np.ones((5, 5), dtype=bool)
BASELINE_TEXT = "photo"
USER_MASK_PERIOD = 5
LAMBDA_PLUS_FLOOR = 30.0


@dataclass
class RegionMasks:
    """Binary target maps: ``target`` is the raw segmentation, ``positive`` its
    dilation (edit here), ``negative`` the complement of a further dilation
    (do not edit here). ``lambda_plus`` weights the positive region loss term."""

    target: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    lambda_plus: float
    dilation_count: int
    add_enabled: bool = False

    def __post_init__(self):
        for name in ("target", "positive", "negative"):
            arr = getattr(self, name)
            if arr.dtype != bool:
                raise ValidationError(f"{name} mask must be boolean")
        if (self.target & ~self.positive).any():
            raise ValidationError("target must be a subset of the positive region")
        if (self.positive & self.negative).any():
            raise ValidationError("positive and negative regions must be disjoint")

    def positive_tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.positive.astype(np.float32))

    def negative_tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.negative.astype(np.float32))


def dilate(mask: np.ndarray, n: int, kernel: np.ndarray = DILATION_KERNEL) -> np.ndarray:
    """n-fold morphological dilation with the given structuring element; n=0 is identity."""
    if mask.dtype != bool:
        raise ValidationError("dilate expects a boolean mask")
    if n < 0:
        raise ValidationError("dilation count must be >= 0")
    if n == 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=kernel, iterations=n)


def target_region(
    patch_image: np.ndarray | torch.Tensor,
    source_text: str,
    provider: SegmentationProvider,
    baseline_text: str = BASELINE_TEXT,
) -> np.ndarray:
    """Pixels more associated with the source text than with the baseline text.

    The patch is resized (nearest) to the provider's declared resolution, both
    queries are scored, and the strictly-positive difference is resized back.
    """
    if isinstance(patch_image, torch.Tensor):
        patch_image = patch_image.detach().cpu().numpy()
    patch_image = np.asarray(patch_image, dtype=np.float32)
    if patch_image.ndim != 3 or patch_image.shape[2] != 3:
        raise ValidationError(f"target_region expects an SxS x3 patch, got {patch_image.shape}")
    resized = resize_nearest(patch_image, (provider.resolution, provider.resolution))
    score_src = np.asarray(provider.segment(resized, source_text), dtype=np.float32)
    score_base = np.asarray(provider.segment(resized, baseline_text), dtype=np.float32)
    mask_full = (score_src - score_base) > 0.0
    return resize_nearest(mask_full, patch_image.shape[:2])


def lambda_plus_ratio(positive: np.ndarray) -> float:
    """Weight for the positive region term: max(30, (S^2 - area) / (1 + area))."""
    area = float(positive.sum())
    return max(LAMBDA_PLUS_FLOOR, (positive.size - area) / (1.0 + area))


def build_regions(mask: np.ndarray, n_dilations: int, add_enabled: bool = False) -> RegionMasks:
    """Dilate the target mask into positive/negative regions.

    positive = dilate(mask, n); negative = NOT dilate(positive, n). The
    positive-term weight comes from :func:`lambda_plus_ratio` only when the
    add operation is enabled, else 1.
    """
    if mask.dtype != bool:
        mask = mask > 0
    positive = dilate(mask, n_dilations)
    negative = ~dilate(positive, n_dilations)
    lam = lambda_plus_ratio(positive) if add_enabled else 1.0
    return RegionMasks(
        target=mask.copy(),
        positive=positive,
        negative=negative,
        lambda_plus=lam,
        dilation_count=n_dilations,
        add_enabled=add_enabled,
    )


# --- user-provided masks ------------------------------------------------------

USER_MASK_KINDS = ("noise_removal", "region_specification")


@dataclass
class UserMaskEntry:
    position: np.ndarray  # camera position of the declared viewpoint
    mask: np.ndarray  # boolean, any resolution


@dataclass
class UserMaskSet:
    kind: str
    entries: list[UserMaskEntry]
    period: int = USER_MASK_PERIOD

    def __post_init__(self):
        if self.kind not in USER_MASK_KINDS:
            raise ValidationError(f"user mask kind must be one of {USER_MASK_KINDS}, got {self.kind!r}")
        if not self.entries:
            raise ValidationError("user mask set has no entries")


def load_user_masks(manifest_path: str | Path) -> UserMaskSet:
    """Read a user-mask manifest: a JSON file with ``kind`` and a ``masks`` list
    of {file, transform_matrix} entries. Mask files are 8-bit single-channel
    images; nonzero means selected."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read user-mask manifest {manifest_path}: {exc}") from exc
    entries = []
    for item in manifest.get("masks", []):
        matrix = np.asarray(item["transform_matrix"], dtype=np.float64)
        if matrix.shape != (4, 4):
            raise ValidationError(f"user mask pose must be 4x4, got {matrix.shape}")
        raw = load_image(manifest_path.parent / item["file"])
        if raw.ndim != 2:
            raise ValidationError(f"user mask {item['file']} must be single-channel")
        entries.append(UserMaskEntry(position=matrix[:3, 3], mask=raw > 0))
    return UserMaskSet(kind=manifest.get("kind", ""), entries=entries, period=int(manifest.get("period", USER_MASK_PERIOD)))


def _nearest_entry(user: UserMaskSet, pose: CameraModel | None) -> UserMaskEntry:
    if pose is None or len(user.entries) == 1:
        return user.entries[0]
    cam_pos = pose.position.detach().cpu().numpy()
    dists = [float(np.linalg.norm(entry.position - cam_pos)) for entry in user.entries]
    return user.entries[int(np.argmin(dists))]


def _regions_from_user(
    user: UserMaskSet,
    pose: CameraModel | None,
    shape: tuple[int, int],
    n_dilations: int,
    add_enabled: bool,
) -> RegionMasks:
    entry = _nearest_entry(user, pose)
    mask = entry.mask
    if mask.shape != shape:
        logger.warning("user mask resolution %s does not match patch %s; resampling", mask.shape, shape)
        mask = resize_nearest(mask, shape)
    return build_regions(mask, n_dilations, add_enabled)


def resolve_masks(
    step: int,
    auto: RegionMasks,
    user: UserMaskSet | None = None,
    pose: CameraModel | None = None,
) -> RegionMasks:
    """Choose between segmentation-derived and user-provided masks for a step.

    Region-specification masks always win; noise-removal masks win once every
    ``user.period`` steps (step mod period == 0); otherwise the auto masks
    pass through.
    """
    if user is None:
        return auto
    if user.kind == "region_specification" or step % user.period == 0:
        return _regions_from_user(user, pose, auto.target.shape, auto.dilation_count, auto.add_enabled)
    return auto


def masks_for_step(
    step: int,
    patch_image: np.ndarray | torch.Tensor,
    source_text: str,
    provider: SegmentationProvider,
    n_dilations: int,
    add_enabled: bool,
    user: UserMaskSet | None = None,
    pose: CameraModel | None = None,
) -> RegionMasks:
    """Full per-step mask pipeline. With region-specification user masks the
    segmentation provider is never invoked."""
    if isinstance(patch_image, torch.Tensor):
        shape = tuple(patch_image.shape[:2])
    else:
        shape = patch_image.shape[:2]
    if user is not None and user.kind == "region_specification":
        return _regions_from_user(user, pose, shape, n_dilations, add_enabled)
    auto = build_regions(target_region(patch_image, source_text, provider), n_dilations, add_enabled)
    return resolve_masks(step, auto, user, pose)
