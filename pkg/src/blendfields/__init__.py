"""Text-driven localized editing of neural radiance fields.

A frozen base field is blended with a trainable editable field through
per-point blending ratios; accumulated-opacity accounting, text-derived
region masks, and a CLIP-style loss stack steer the edit to the target
region while preserving everything else.
"""

from .cameras import CameraModel, PoseBounds, sample_camera_pose
from .compositing import blend_samples, composite_blended, composite_original
from .config import EditConfig, PretrainConfig, load_edit_config, parse_edit_config
from .encoding import EncodingConfig, positional_encode
from .errors import (
    BlendfieldsError,
    CheckpointError,
    ProviderError,
    TrainingDivergenceError,
    ValidationError,
)
from .fields import (
    BaseField,
    BaseScene,
    EditableArchitecture,
    EditableField,
    EditableOutput,
    EditedScene,
    FieldOutput,
    MlpArchitecture,
    load_base_scene,
    load_edited_scene,
    save_base_scene,
    save_edited_scene,
)
from .localizer import RegionMasks, build_regions, dilate, lambda_plus_ratio, resolve_masks, target_region
from .metrics import MetricReport, evaluate, manipulative_precision, psnr
from .objectives import (
    AnnealSchedule,
    LossWeights,
    OpacityThresholds,
    anneal,
    clip_objective,
    directional_clip_loss,
    global_clip_loss,
    opacity_loss,
    reg_loss,
    region_loss,
    total_loss,
)
from .renderer import BlendedRender, RenderConfig, apply_operation_toggles, render_full_image, render_patch
from .sampling import RayPatch, sample_depths, sample_patch_rays
from .trainer import EditResult, TrainState, edit, pretrain_scene

__version__ = "0.1.0"

__all__ = [
    "AnnealSchedule", "BaseField", "BaseScene", "BlendedRender", "BlendfieldsError",
    "CameraModel", "CheckpointError", "EditConfig", "EditResult", "EditableArchitecture",
    "EditableField", "EditableOutput", "EditedScene", "EncodingConfig", "FieldOutput",
    "LossWeights", "MetricReport", "MlpArchitecture", "OpacityThresholds", "PoseBounds",
    "PretrainConfig", "ProviderError", "RayPatch", "RegionMasks", "RenderConfig",
    "TrainState", "TrainingDivergenceError", "ValidationError",
    "anneal", "apply_operation_toggles", "blend_samples", "build_regions",
    "clip_objective", "composite_blended", "composite_original", "dilate",
    "directional_clip_loss", "edit", "evaluate", "global_clip_loss",
    "lambda_plus_ratio", "load_base_scene", "load_edit_config", "load_edited_scene",
    "manipulative_precision", "opacity_loss", "parse_edit_config", "positional_encode",
    "pretrain_scene", "psnr", "reg_loss", "region_loss", "render_full_image",
    "render_patch", "resolve_masks", "sample_camera_pose", "sample_depths",
    "sample_patch_rays", "save_base_scene", "save_edited_scene", "target_region",
    "total_loss",
]
