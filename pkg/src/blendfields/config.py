"""Run configuration: strict YAML parsing, profiles, and defaults.

Unknown keys are rejected everywhere so hyperparameter typos fail loudly.
The ``desk`` profile scales patch size, sample counts, budgets, schedules,
and the regularization activation step down so a full edit finishes in
minutes on a CPU; ``full`` mirrors the production-scale settings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import AugmentConfig
from .cameras import PoseBounds
from .errors import ValidationError
from .fields import EditableArchitecture, MlpArchitecture
from .encoding import EncodingConfig
from .objectives import AnnealSchedule, LossWeights, OpacityThresholds
from .renderer import ALL_OPERATIONS

SEGMENTATION_PROVIDERS = ("mock", "disk", "remote")
EMBEDDING_PROVIDERS = ("mock", "remote")


@dataclass(frozen=True)
class EditConfig:
    operations: frozenset
    source_text: str
    target_text: str
    iterations: int
    seed: int = 0
    patch_size: int = 72
    n_dilations: int = 10
    image_width: int = 800
    image_height: int = 800
    fov_x_degrees: float = 39.6
    n_coarse: int = 64
    n_fine: int = 128
    white_background: bool = True
    pose_bounds: PoseBounds = field(default_factory=PoseBounds)
    weights: LossWeights = field(default_factory=LossWeights)
    thresholds: OpacityThresholds = field(default_factory=OpacityThresholds)
    lr_start: float = 5e-4
    lr_end: float = 1e-4
    lr_decay_steps: int = 1000
    reg_activation_step: int = 1000
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    templates_file: str | None = None
    segmentation_provider: str = "mock"
    embedding_provider: str = "mock"
    provider_url: str | None = None
    provider_retries: int = 2
    user_masks: str | None = None
    preview_every: int = 0
    editable_width: int = 256
    editable_blocks: int = 2

    def __post_init__(self):
        if not self.operations:
            raise ValidationError("at least one editing operation must be enabled")
        unknown = set(self.operations) - ALL_OPERATIONS
        if unknown:
            raise ValidationError(f"unknown operations: {sorted(unknown)}")
        if self.iterations <= 0:
            raise ValidationError("iteration budget must be positive")
        if not self.source_text or not self.target_text:
            raise ValidationError("source_text and target_text are required")
        if self.patch_size < 1 or self.patch_size > min(self.image_width, self.image_height):
            raise ValidationError("patch size must fit inside the image plane")
        if self.segmentation_provider not in SEGMENTATION_PROVIDERS:
            raise ValidationError(f"segmentation provider must be one of {SEGMENTATION_PROVIDERS}")
        if self.embedding_provider not in EMBEDDING_PROVIDERS:
            raise ValidationError(f"embedding provider must be one of {EMBEDDING_PROVIDERS}")
        if "remote" in (self.segmentation_provider, self.embedding_provider) and not self.provider_url:
            raise ValidationError("remote providers need provider_url")

    def fov_x_radians(self) -> float:
        return math.radians(self.fov_x_degrees)


def default_iterations(operations: frozenset, scale: float = 1.0) -> int:
    """Budget by task family: 3k for change-only / remove-only, 4k when adding
    densities together with color change, 5k when adding without color change."""
    if "add" in operations and "change" in operations:
        base = 4000
    elif "add" in operations:
        base = 5000
    else:
        base = 3000
    return max(1, int(round(base * scale)))


PROFILES: dict[str, dict] = {
    "full": {},
    "desk": {
        "patch_size": 32,
        "n_dilations": 2,
        "image": {"width": 64, "height": 64, "fov_x_degrees": 40.0},
        "render": {"n_coarse": 16, "n_fine": 24},
        "pose_bounds": {"radius_min": 4.0, "radius_max": 4.0, "elevation_min_deg": 10.0, "elevation_max_deg": 60.0},
        "learning_rate": {"start": 3.0e-2, "end": 1.0e-2, "decay_steps": 100},
        "reg_activation_step": 100,
        "thresholds": {"add": {"steps": 30}, "change": {"steps": 30}},
        "augment": {"batch_size": 12},
        "editable": {"width": 64, "blocks": 2},
        "_iteration_scale": 0.1,
    },
}


def _reject_unknown(data: dict, allowed: set[str], context: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ValidationError(f"unknown keys in {context}: {sorted(unknown)}")


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _parse_schedule(data: dict, context: str, default_start: float, require_target: bool) -> AnnealSchedule:
    _reject_unknown(data, {"start", "target", "steps"}, context)
    if require_target and "target" not in data:
        raise ValidationError(f"{context} needs an explicit target threshold (no universal default)")
    return AnnealSchedule(
        start=float(data.get("start", default_start)),
        target=float(data.get("target", 0.2)),
        steps=int(data.get("steps", 100)),
    )


def parse_edit_config(data: dict, profile: str = "full") -> EditConfig:
    """Build an EditConfig from a plain mapping, applying profile defaults.

    Every enabled operation with an annealed threshold must state its target.
    """
    if profile not in PROFILES:
        raise ValidationError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    if not isinstance(data, dict):
        raise ValidationError("edit config must be a mapping")
    merged = _merge(PROFILES[profile], data)
    iteration_scale = merged.pop("_iteration_scale", 1.0)

    top_keys = {
        "operations", "source_text", "target_text", "iterations", "seed", "patch_size",
        "n_dilations", "image", "render", "pose_bounds", "weights", "thresholds",
        "learning_rate", "reg_activation_step", "augment", "templates_file", "providers",
        "user_masks", "preview_every", "editable",
    }
    _reject_unknown(merged, top_keys, "edit config")

    for required in ("operations", "source_text", "target_text"):
        if required not in merged:
            raise ValidationError(f"edit config is missing required key {required!r}")
    operations = frozenset(merged["operations"])

    image = merged.get("image", {})
    _reject_unknown(image, {"width", "height", "fov_x_degrees"}, "image")
    render = merged.get("render", {})
    _reject_unknown(render, {"n_coarse", "n_fine", "white_background"}, "render")
    bounds = merged.get("pose_bounds", {})
    _reject_unknown(bounds, {"radius_min", "radius_max", "elevation_min_deg", "elevation_max_deg"}, "pose_bounds")
    weights = merged.get("weights", {})
    _reject_unknown(weights, {"lambda_global", "lambda_1", "lambda_2", "lambda_3"}, "weights")
    lr = merged.get("learning_rate", {})
    _reject_unknown(lr, {"start", "end", "decay_steps"}, "learning_rate")
    aug = merged.get("augment", {})
    _reject_unknown(
        aug,
        {"batch_size", "perspective_scale", "perspective_prob", "enable_color_jitter",
         "enable_translation", "enable_cutout", "brightness", "saturation", "contrast",
         "translation_ratio", "cutout_ratio"},
        "augment",
    )
    providers = merged.get("providers", {})
    _reject_unknown(providers, {"segmentation", "embedding", "url", "retries"}, "providers")
    editable = merged.get("editable", {})
    _reject_unknown(editable, {"width", "blocks"}, "editable")

    thresholds_data = merged.get("thresholds", {})
    _reject_unknown(thresholds_data, {"add", "change", "remove"}, "thresholds")
    add_schedule = _parse_schedule(
        thresholds_data.get("add", {"target": 0.2}), "thresholds.add",
        default_start=0.8, require_target="add" in operations,
    )
    change_schedule = _parse_schedule(
        thresholds_data.get("change", {"target": 0.2}), "thresholds.change",
        default_start=0.5, require_target="change" in operations,
    )
    thresholds = OpacityThresholds(
        add=add_schedule,
        change=change_schedule,
        remove=float(thresholds_data.get("remove", 0.05)),
    )

    iterations = merged.get("iterations")
    if iterations is None:
        iterations = default_iterations(operations, iteration_scale)

    return EditConfig(
        operations=operations,
        source_text=str(merged["source_text"]),
        target_text=str(merged["target_text"]),
        iterations=int(iterations),
        seed=int(merged.get("seed", 0)),
        patch_size=int(merged.get("patch_size", 72)),
        n_dilations=int(merged.get("n_dilations", 10)),
        image_width=int(image.get("width", 800)),
        image_height=int(image.get("height", 800)),
        fov_x_degrees=float(image.get("fov_x_degrees", 39.6)),
        n_coarse=int(render.get("n_coarse", 64)),
        n_fine=int(render.get("n_fine", 128)),
        white_background=bool(render.get("white_background", True)),
        pose_bounds=PoseBounds(
            radius_min=float(bounds.get("radius_min", 4.0)),
            radius_max=float(bounds.get("radius_max", 4.0)),
            elevation_min_deg=float(bounds.get("elevation_min_deg", -5.0)),
            elevation_max_deg=float(bounds.get("elevation_max_deg", 85.0)),
        ),
        weights=LossWeights(
            lambda_global=float(weights.get("lambda_global", 0.5)),
            lambda_1=float(weights.get("lambda_1", 1.0)),
            lambda_2=float(weights.get("lambda_2", 2.0)),
            lambda_3=float(weights.get("lambda_3", 0.2)),
        ),
        thresholds=thresholds,
        lr_start=float(lr.get("start", 5e-4)),
        lr_end=float(lr.get("end", 1e-4)),
        lr_decay_steps=int(lr.get("decay_steps", 1000)),
        reg_activation_step=int(merged.get("reg_activation_step", 1000)),
        augment=AugmentConfig(
            batch_size=int(aug.get("batch_size", 24)),
            perspective_scale=float(aug.get("perspective_scale", 0.4)),
            perspective_prob=float(aug.get("perspective_prob", 0.5)),
            enable_color_jitter=bool(aug.get("enable_color_jitter", True)),
            enable_translation=bool(aug.get("enable_translation", True)),
            enable_cutout=bool(aug.get("enable_cutout", True)),
            brightness=float(aug.get("brightness", 0.5)),
            saturation=float(aug.get("saturation", 2.0)),
            contrast=float(aug.get("contrast", 0.5)),
            translation_ratio=float(aug.get("translation_ratio", 0.125)),
            cutout_ratio=float(aug.get("cutout_ratio", 0.5)),
        ),
        templates_file=merged.get("templates_file"),
        segmentation_provider=str(providers.get("segmentation", "mock")),
        embedding_provider=str(providers.get("embedding", "mock")),
        provider_url=providers.get("url"),
        provider_retries=int(providers.get("retries", 2)),
        user_masks=merged.get("user_masks"),
        preview_every=int(merged.get("preview_every", 0)),
        editable_width=int(editable.get("width", 256)),
        editable_blocks=int(editable.get("blocks", 2)),
    )


def load_edit_config(path: str | Path, profile: str = "full") -> EditConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ValidationError(f"cannot read edit config {path}: {exc}") from exc
    return parse_edit_config(data or {}, profile)


@dataclass(frozen=True)
class PretrainConfig:
    """Reconstruction-training settings for the base field pair."""

    steps: int = 1600
    batch_rays: int = 512
    lr: float = 5e-4
    n_coarse: int = 16
    n_fine: int = 24
    white_background: bool = True
    near: float = 2.0
    far: float = 6.0
    seed: int = 0
    architecture: MlpArchitecture = field(default_factory=lambda: MlpArchitecture(depth=3, width=64, skip_layers=(2,)))
    encoding: EncodingConfig = field(default_factory=lambda: EncodingConfig(num_freqs_position=6, num_freqs_direction=2))
    val_psnr_target: float = 25.0

    def __post_init__(self):
        if self.steps < 1 or self.batch_rays < 1:
            raise ValidationError("pretraining needs positive steps and batch size")
        if not self.near < self.far:
            raise ValidationError("near must be smaller than far")


PRETRAIN_PROFILES: dict[str, PretrainConfig] = {
    "desk": PretrainConfig(),
    "full": PretrainConfig(
        steps=200_000,
        batch_rays=4096,
        n_coarse=64,
        n_fine=128,
        architecture=MlpArchitecture(depth=8, width=256, skip_layers=(4,)),
        encoding=EncodingConfig(num_freqs_position=10, num_freqs_direction=4),
    ),
}


def pretrain_config_for(profile: str, overrides: dict | None = None) -> PretrainConfig:
    if profile not in PRETRAIN_PROFILES:
        raise ValidationError(f"unknown profile {profile!r}; choose from {sorted(PRETRAIN_PROFILES)}")
    cfg = PRETRAIN_PROFILES[profile]
    if not overrides:
        return cfg
    allowed = {"steps", "batch_rays", "lr", "n_coarse", "n_fine", "white_background", "near", "far", "seed", "val_psnr_target"}
    _reject_unknown(overrides, allowed, "pretrain config")
    from dataclasses import replace

    return replace(cfg, **overrides)
