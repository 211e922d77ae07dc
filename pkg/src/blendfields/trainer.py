"""Training loops: reconstruction pretraining of the base field pair and the
text-driven editing loop over the editable field."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .augment import augment_images, augment_texts, load_templates
from .cameras import CameraModel, PoseBounds, look_at_pose, sample_camera_pose
from .compositing import alpha_from_density, composite_original, transmittance
from .config import EditConfig, PretrainConfig
from .dataset import SceneDataset
from .errors import ProviderError, TrainingDivergenceError, ValidationError
from .fields import (
    BaseField,
    BaseScene,
    EditableArchitecture,
    EditableField,
    EditedScene,
    FieldOutput,
    load_base_scene,
    parameter_fingerprint,
)
from .localizer import RegionMasks, UserMaskSet, load_user_masks, masks_for_step
from .objectives import (
    LossWeights,
    clip_objective,
    opacity_loss,
    reg_loss,
    region_loss,
    total_loss,
)
from .providers import EmbeddingProvider, SegmentationProvider
from .renderer import (
    RenderConfig,
    apply_operation_toggles,  # noqa: F401  (re-exported: toggles belong to the training surface)
    render_full_image,
    render_patch,
    render_rays_blended,
)
from .sampling import deltas_from_depths, importance_depths, merge_depths, stratified_depths

logger = logging.getLogger(__name__)


def linear_decay_lr(step: int, start: float, end: float, decay_steps: int) -> float:
    """Linear decay start -> end over the first ``decay_steps`` steps, constant after."""
    if decay_steps <= 0:
        return end
    t = min(step / decay_steps, 1.0)
    return start + (end - start) * t


def _psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0:
        return math.inf
    return -10.0 * math.log10(mse)


def _ray_bank(dataset: SceneDataset, split: str) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    from .cameras import rays_for_pixels
    from .sampling import full_image_pixels

    origins, dirs, colors = [], [], []
    for frame in dataset.split(split):
        cam = dataset.camera(frame)
        px, py = full_image_pixels(cam)
        o, d = rays_for_pixels(cam, px, py)
        origins.append(o.reshape(-1, 3))
        dirs.append(d.reshape(-1, 3))
        colors.append(torch.from_numpy(frame.image.reshape(-1, 3).astype(np.float32)))
    if not origins:
        raise ValidationError(f"dataset has no '{split}' frames")
    return torch.cat(origins), torch.cat(dirs), torch.cat(colors)


def pretrain_scene(
    dataset: SceneDataset,
    cfg: PretrainConfig,
    checkpoint_path: str | Path | None = None,
    evaluate_val: bool = True,
) -> tuple[BaseScene, float | None]:
    """Fit the coarse/fine base fields to the dataset by squared error on
    rendered pixels; returns the frozen scene and its held-out PSNR.

    If ``checkpoint_path`` exists it is loaded instead of training.
    """
    if checkpoint_path is not None and Path(checkpoint_path).exists():
        logger.info("loading existing base checkpoint %s; skipping pretraining", checkpoint_path)
        return load_base_scene(checkpoint_path), None

    rng = torch.Generator().manual_seed(cfg.seed)
    torch.manual_seed(cfg.seed)
    coarse = BaseField(cfg.architecture, cfg.encoding)
    fine = BaseField(cfg.architecture, cfg.encoding)
    optimizer = torch.optim.Adam(list(coarse.parameters()) + list(fine.parameters()), lr=cfg.lr)

    origins, dirs, gt_colors = _ray_bank(dataset, "train")
    n_rays = origins.shape[0]
    edges = torch.linspace(cfg.near, cfg.far, cfg.n_coarse + 1)

    for step in range(cfg.steps):
        idx = torch.randint(0, n_rays, (cfg.batch_rays,), generator=rng)
        o, d, gt = origins[idx], dirs[idx], gt_colors[idx]

        t_coarse = stratified_depths(cfg.near, cfg.far, cfg.n_coarse, (cfg.batch_rays,), rng)
        deltas_c = deltas_from_depths(t_coarse, cfg.far)
        points = o.unsqueeze(1) + t_coarse.unsqueeze(-1) * d.unsqueeze(1)
        dens_c, col_c = coarse(points, d.unsqueeze(1).expand_as(points))
        color_c, acc_c = composite_original(FieldOutput(dens_c, col_c), deltas_c)
        if cfg.white_background:
            color_c = color_c + (1.0 - acc_c).unsqueeze(-1)

        with torch.no_grad():
            alpha = alpha_from_density(dens_c, deltas_c)
            weights = transmittance(alpha) * alpha
        if cfg.n_fine > 0:
            t_fine = importance_depths(edges, weights, cfg.n_fine, rng)
            depths = merge_depths(t_coarse, t_fine)
        else:
            depths = t_coarse
        deltas_f = deltas_from_depths(depths, cfg.far)
        points_f = o.unsqueeze(1) + depths.unsqueeze(-1) * d.unsqueeze(1)
        dens_f, col_f = fine(points_f, d.unsqueeze(1).expand_as(points_f))
        color_f, acc_f = composite_original(FieldOutput(dens_f, col_f), deltas_f)
        if cfg.white_background:
            color_f = color_f + (1.0 - acc_f).unsqueeze(-1)

        loss = torch.mean((color_c - gt) ** 2) + torch.mean((color_f - gt) ** 2)
        if not torch.isfinite(loss):
            raise TrainingDivergenceError(f"non-finite reconstruction loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if step % 200 == 0:
            logger.info("pretrain step %d loss %.5f", step, loss.item())

    scene = BaseScene(
        coarse=coarse, fine=fine, encoding=cfg.encoding, architecture=cfg.architecture,
        near=cfg.near, far=cfg.far,
    ).freeze()

    val_psnr = None
    if evaluate_val:
        val_psnr = validate_psnr(scene, dataset, cfg)
        if val_psnr is not None and val_psnr < cfg.val_psnr_target:
            logger.warning("held-out PSNR %.2f dB is below the %.1f dB target", val_psnr, cfg.val_psnr_target)
    return scene, val_psnr


def validate_psnr(scene: BaseScene, dataset: SceneDataset, cfg: PretrainConfig) -> float | None:
    """Mean PSNR of base-only renders against held-out views (val split, else test)."""
    frames = dataset.split("val") or dataset.split("test")
    if not frames:
        return None
    render_cfg = RenderConfig(n_coarse=cfg.n_coarse, n_fine=cfg.n_fine, white_background=cfg.white_background)
    values = []
    for frame in frames:
        cam = dataset.camera(frame)
        render = render_full_image(scene, None, frozenset({"change"}), cam, render_cfg)
        values.append(_psnr(render.color_original.clamp(0, 1).numpy(), frame.image))
    return float(np.mean(values))


# --- editing ------------------------------------------------------------------


@dataclass
class TrainState:
    """Everything needed to resume an edit run bit-for-bit under the
    deterministic mock providers."""

    step: int
    editable_state: dict
    optimizer_state: dict
    rng_state: torch.Tensor

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "step": self.step,
                "editable_state": self.editable_state,
                "optimizer_state": self.optimizer_state,
                "rng_state": self.rng_state,
            },
            path,
        )

    @classmethod
    def load(cls, path: str | Path) -> "TrainState":
        data = torch.load(path, weights_only=True)
        return cls(
            step=int(data["step"]),
            editable_state=data["editable_state"],
            optimizer_state=data["optimizer_state"],
            rng_state=data["rng_state"],
        )


@dataclass
class EditResult:
    scene: EditedScene
    log: list[dict]
    state: TrainState


def preview_camera(cfg: EditConfig) -> CameraModel:
    """Fixed mid-band camera used for periodic preview renders."""
    b = cfg.pose_bounds
    radius = 0.5 * (b.radius_min + b.radius_max)
    elevation = math.radians(0.5 * (b.elevation_min_deg + b.elevation_max_deg))
    azimuth = 0.8
    eye = torch.tensor(
        [
            radius * math.cos(elevation) * math.cos(azimuth),
            radius * math.cos(elevation) * math.sin(azimuth),
            radius * math.sin(elevation),
        ]
    )
    focal = 0.5 * cfg.image_width / math.tan(0.5 * cfg.fov_x_radians())
    return CameraModel(width=cfg.image_width, height=cfg.image_height, focal=focal, pose=look_at_pose(eye))


def _masks_with_retry(cfg: EditConfig, **kwargs) -> RegionMasks:
    last_error: ProviderError | None = None
    for attempt in range(cfg.provider_retries + 1):
        try:
            return masks_for_step(**kwargs)
        except ProviderError as exc:
            last_error = exc
            logger.warning("segmentation provider failed (attempt %d/%d): %s", attempt + 1, cfg.provider_retries + 1, exc)
    raise last_error


def edit(
    base: BaseScene,
    cfg: EditConfig,
    segmentation: SegmentationProvider,
    embedding: EmbeddingProvider,
    out_dir: str | Path | None = None,
    resume_state: TrainState | None = None,
    user_masks: UserMaskSet | None = None,
) -> EditResult:
    """Run the localized text-driven editing loop over a frozen base scene.

    Per step: sample a pose, render the patch triplet and routed opacity
    patches, build the target-region masks, form the augmented text objective
    plus the localized losses, and update the editable parameters only.
    """
    if not getattr(embedding, "supports_gradients", False):
        raise ValidationError("editing requires a differentiable embedding provider (remote providers are evaluation-only)")
    if cfg.user_masks is not None and user_masks is None:
        user_masks = load_user_masks(cfg.user_masks)

    base.freeze()
    base_fingerprint = parameter_fingerprint(base.coarse) + parameter_fingerprint(base.fine)

    editable = EditableField(
        EditableArchitecture(width=cfg.editable_width, num_residual_blocks=cfg.editable_blocks),
        base.encoding,
    )
    optimizer = torch.optim.Adam(editable.parameters(), lr=cfg.lr_start)
    rng = torch.Generator().manual_seed(cfg.seed)

    start_step = 0
    if resume_state is not None:
        editable.load_state_dict(resume_state.editable_state)
        optimizer.load_state_dict(resume_state.optimizer_state)
        rng.set_state(resume_state.rng_state)
        start_step = resume_state.step

    render_cfg = RenderConfig(
        patch_size=cfg.patch_size,
        n_coarse=cfg.n_coarse,
        n_fine=cfg.n_fine,
        white_background=cfg.white_background,
    )
    templates = load_templates(cfg.templates_file)
    focal = 0.5 * cfg.image_width / math.tan(0.5 * cfg.fov_x_radians())
    add_enabled = "add" in cfg.operations
    out_dir = Path(out_dir) if out_dir is not None else None

    log: list[dict] = []
    for step in range(start_step, cfg.iterations):
        t0 = time.perf_counter()
        lr = linear_decay_lr(step, cfg.lr_start, cfg.lr_end, cfg.lr_decay_steps)
        for group in optimizer.param_groups:
            group["lr"] = lr
        thresholds = cfg.thresholds.at_step(step)

        cam = sample_camera_pose(rng, cfg.pose_bounds, cfg.image_width, cfg.image_height, focal)
        render, _patch = render_patch(
            base, editable, cfg.operations, cam, render_cfg, rng,
            route_gradients=True, with_grad=True,
        )

        original_np = render.color_original.detach().clamp(0, 1).numpy()
        masks = _masks_with_retry(
            cfg,
            step=step,
            patch_image=original_np,
            source_text=cfg.source_text,
            provider=segmentation,
            n_dilations=cfg.n_dilations,
            add_enabled=add_enabled,
            user=user_masks,
            pose=cam,
        )

        aug_seed = int(torch.randint(0, 2**31 - 1, (1,), generator=rng))
        batches = []
        for image in (render.color_original, render.color_editable, render.color_blended):
            batches.append(augment_images(image, cfg.augment, torch.Generator().manual_seed(aug_seed)))
        text_pairs = augment_texts(cfg.source_text, cfg.target_text, templates, torch.Generator().manual_seed(aug_seed + 1))

        clip_term = clip_objective(
            batches[0], batches[1], batches[2],
            [p[0] for p in text_pairs], [p[1] for p in text_pairs],
            embedding, lambda_global=cfg.weights.lambda_global,
        )
        region_term = region_loss(render.opacity_add, render.opacity_remove, render.opacity_change, masks)
        opacity_term = opacity_loss(
            {"add": render.opacity_add, "remove": render.opacity_remove, "change": render.opacity_change},
            thresholds,
            cfg.operations,
        )
        reg_active = add_enabled and step >= cfg.reg_activation_step
        reg_term = reg_loss(render.opacity_add) if reg_active else torch.zeros(())
        loss = total_loss(clip_term, region_term, opacity_term, reg_term, cfg.weights, reg_active)

        components = {
            "clip": clip_term.item(),
            "region": region_term.item(),
            "opacity": opacity_term.item(),
            "reg": reg_term.item(),
            "total": loss.item(),
        }
        for name, value in components.items():
            if not math.isfinite(value):
                raise TrainingDivergenceError(f"non-finite {name} loss at step {step}")

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        log.append(
            {
                "step": step,
                "lr": lr,
                "tau_add": thresholds["add"],
                "tau_remove": thresholds["remove"],
                "tau_change": thresholds["change"],
                "loss_clip": components["clip"],
                "loss_region": components["region"],
                "loss_opacity": components["opacity"],
                "loss_reg": components["reg"],
                "loss_total": components["total"],
                "wall_time": time.perf_counter() - t0,
            }
        )

        if out_dir is not None and cfg.preview_every > 0 and (step + 1) % cfg.preview_every == 0:
            _write_preview(base, editable, cfg, out_dir, step)

    final_fingerprint = parameter_fingerprint(base.coarse) + parameter_fingerprint(base.fine)
    if final_fingerprint != base_fingerprint:
        raise RuntimeError("base field parameters changed during editing; frozen contract violated")

    scene = EditedScene(base=base, editable=editable, enabled_operations=cfg.operations)
    state = TrainState(
        step=cfg.iterations,
        editable_state=editable.state_dict(),
        optimizer_state=optimizer.state_dict(),
        rng_state=rng.get_state(),
    )
    return EditResult(scene=scene, log=log, state=state)


def _write_preview(base: BaseScene, editable: EditableField, cfg: EditConfig, out_dir: Path, step: int) -> None:
    from .imageio import save_image
    from .renderer import render_as_images

    cam = preview_camera(cfg)
    render_cfg = RenderConfig(
        patch_size=cfg.patch_size, n_coarse=cfg.n_coarse, n_fine=cfg.n_fine,
        white_background=cfg.white_background,
    )
    render = render_full_image(base, editable, cfg.operations, cam, render_cfg)
    for name, image in render_as_images(render).items():
        save_image(out_dir / "previews" / f"step_{step + 1:06d}_{name}.png", image)


def write_training_log(path: str | Path, log: list[dict]) -> None:
    """Newline-delimited JSON records, one per step."""
    import json

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for record in log:
            fh.write(json.dumps(record) + "\n")
