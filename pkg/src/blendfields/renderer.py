"""Two-pass volume rendering of patches and full images from the blended fields."""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass, replace

import torch

from .cameras import CameraModel
from .compositing import (
    alpha_from_density,
    composite_blended,
    composite_original,
    transmittance,
)
from .errors import ValidationError
from .fields import BaseField, BaseScene, EditableField, EditableOutput, FieldOutput
from .sampling import (
    RayPatch,
    deltas_from_depths,
    full_image_pixels,
    importance_depths,
    merge_depths,
    sample_patch_rays,
    stratified_depths,
)

ALL_OPERATIONS = frozenset({"add", "remove", "change"})


@dataclass(frozen=True)
class RenderConfig:
    """Sampling and compositing options shared by training and offline rendering."""

    patch_size: int = 72
    n_coarse: int = 64
    n_fine: int = 128
    white_background: bool = True
    chunk_rays: int = 4096


@dataclass
class BlendedRender:
    """The three color patches and three accumulated-opacity patches of one render.

    Colors are [S, S, 3]; the original and blended colors are background
    composited per config, the editable color is left raw. Values are not
    clamped; clamping happens only when writing image files.
    """

    color_original: torch.Tensor
    color_editable: torch.Tensor
    color_blended: torch.Tensor
    opacity_add: torch.Tensor
    opacity_remove: torch.Tensor
    opacity_change: torch.Tensor


def apply_operation_toggles(edit: EditableOutput, ops: frozenset) -> EditableOutput:
    """Gate the editable heads by the enabled operations.

    A disabled head is multiplied by zero, so its value is exactly zero and
    no gradient reaches its parameters: add gates the editable density,
    remove gates the density blend ratio, change gates the color blend ratio.
    """
    if not ops:
        raise ValidationError("at least one editing operation must be enabled")
    unknown = set(ops) - ALL_OPERATIONS
    if unknown:
        raise ValidationError(f"unknown editing operations: {sorted(unknown)}")
    density = edit.density if "add" in ops else edit.density * 0.0
    density_blend = edit.density_blend if "remove" in ops else edit.density_blend * 0.0
    color_blend = edit.color_blend if "change" in ops else edit.color_blend * 0.0
    return replace(edit, density=density, density_blend=density_blend, color_blend=color_blend)


def _query_base(net: BaseField, origins: torch.Tensor, dirs: torch.Tensor, depths: torch.Tensor) -> FieldOutput:
    points = origins.unsqueeze(-2) + depths.unsqueeze(-1) * dirs.unsqueeze(-2)
    dirs_per_sample = dirs.unsqueeze(-2).expand_as(points)
    density, color = net(points, dirs_per_sample)
    return FieldOutput(density=density, color=color)


def _query_editable(net: EditableField, ops: frozenset, origins: torch.Tensor, dirs: torch.Tensor, depths: torch.Tensor) -> EditableOutput:
    points = origins.unsqueeze(-2) + depths.unsqueeze(-1) * dirs.unsqueeze(-2)
    dirs_per_sample = dirs.unsqueeze(-2).expand_as(points)
    density, color, density_blend, color_blend = net(points, dirs_per_sample)
    out = EditableOutput(density=density, color=color, density_blend=density_blend, color_blend=color_blend)
    return apply_operation_toggles(out, ops)


def _composite_background(color: torch.Tensor, acc: torch.Tensor, white_background: bool) -> torch.Tensor:
    if white_background:
        return color + (1.0 - acc).unsqueeze(-1)
    return color


@dataclass
class RayRenderResult:
    """Flat per-ray render outputs (rays on the leading axis)."""

    color_original: torch.Tensor
    color_editable: torch.Tensor
    color_blended: torch.Tensor
    opacity_add: torch.Tensor
    opacity_remove: torch.Tensor
    opacity_change: torch.Tensor


def render_rays_blended(
    base: BaseScene,
    editable: EditableField | None,
    ops: frozenset,
    origins: torch.Tensor,
    dirs: torch.Tensor,
    cfg: RenderConfig,
    rng: torch.Generator | None = None,
    deterministic: bool = False,
    route_gradients: bool = True,
    with_grad: bool = True,
) -> RayRenderResult:
    """Render a flat ray batch through the coarse + importance passes.

    The coarse pass only supplies importance weights and runs without
    gradients; losses read the fine pass. Base-field outputs are evaluated
    without gradients (the base is frozen); the editable field keeps its
    graph when ``with_grad``.
    """
    n_rays = origins.shape[0]
    near, far = base.near, base.far

    t_coarse = stratified_depths(near, far, cfg.n_coarse, (n_rays,), rng, deterministic)
    with torch.no_grad():
        base_c = _query_base(base.coarse, origins, dirs, t_coarse)
        deltas_c = deltas_from_depths(t_coarse, far)
        if editable is not None:
            edit_c = _query_editable(editable, ops, origins, dirs, t_coarse)
            density_prime = (1.0 - edit_c.density_blend) * base_c.density
            alpha_b = alpha_from_density(density_prime + edit_c.density, deltas_c)
        else:
            alpha_b = alpha_from_density(base_c.density, deltas_c)
        weights = transmittance(alpha_b) * alpha_b

    if cfg.n_fine > 0:
        edges = torch.linspace(near, far, cfg.n_coarse + 1)
        t_fine = importance_depths(edges, weights, cfg.n_fine, rng, deterministic)
        depths = merge_depths(t_coarse, t_fine)
    else:
        depths = t_coarse
    deltas = deltas_from_depths(depths, far)

    with torch.no_grad():
        base_f = _query_base(base.fine, origins, dirs, depths)

    grad_ctx = nullcontext() if with_grad else torch.no_grad()
    with grad_ctx:
        if editable is not None:
            edit_f = _query_editable(editable, ops, origins, dirs, depths)
            blend = composite_blended(base_f, edit_f, deltas, route_gradients=route_gradients)
            color_original = _composite_background(blend.color_original, blend.acc_original, cfg.white_background)
            color_blended = _composite_background(blend.color_blended, blend.acc_blended, cfg.white_background)
            return RayRenderResult(
                color_original=color_original,
                color_editable=blend.color_editable,
                color_blended=color_blended,
                opacity_add=blend.opacity_add,
                opacity_remove=blend.opacity_remove,
                opacity_change=blend.opacity_change,
            )
        color_raw, acc = composite_original(base_f, deltas)
        color = _composite_background(color_raw, acc, cfg.white_background)
        zeros = torch.zeros_like(acc)
        return RayRenderResult(
            color_original=color,
            color_editable=torch.zeros_like(color_raw),
            color_blended=color,
            opacity_add=zeros,
            opacity_remove=zeros,
            opacity_change=zeros,
        )


def render_patch(
    base: BaseScene,
    editable: EditableField | None,
    ops: frozenset,
    cam: CameraModel,
    cfg: RenderConfig,
    rng: torch.Generator | None = None,
    deterministic: bool = False,
    route_gradients: bool = True,
    with_grad: bool = True,
) -> tuple[BlendedRender, RayPatch]:
    """Render one strided SxS patch from ``cam``; returns the render and the patch rays."""
    patch = sample_patch_rays(cam, cfg.patch_size, rng or torch.Generator().manual_seed(0), base.near, base.far)
    flat = render_rays_blended(
        base,
        editable,
        ops,
        patch.origins.reshape(-1, 3),
        patch.directions.reshape(-1, 3),
        cfg,
        rng,
        deterministic=deterministic,
        route_gradients=route_gradients,
        with_grad=with_grad,
    )
    S = cfg.patch_size
    render = BlendedRender(
        color_original=flat.color_original.reshape(S, S, 3),
        color_editable=flat.color_editable.reshape(S, S, 3),
        color_blended=flat.color_blended.reshape(S, S, 3),
        opacity_add=flat.opacity_add.reshape(S, S),
        opacity_remove=flat.opacity_remove.reshape(S, S),
        opacity_change=flat.opacity_change.reshape(S, S),
    )
    return render, patch


def render_as_images(render: BlendedRender) -> dict[str, "object"]:
    """Convert a render to writable arrays: colors clamped to [0,1] (the only
    place clamping happens), opacities as grayscale maps."""
    return {
        "color_original": render.color_original.detach().clamp(0, 1).numpy(),
        "color_editable": render.color_editable.detach().clamp(0, 1).numpy(),
        "color_blended": render.color_blended.detach().clamp(0, 1).numpy(),
        "opacity_add": render.opacity_add.detach().clamp(0, 1).numpy(),
        "opacity_remove": render.opacity_remove.detach().clamp(0, 1).numpy(),
        "opacity_change": render.opacity_change.detach().clamp(0, 1).numpy(),
    }


def render_full_image(
    base: BaseScene,
    editable: EditableField | None,
    ops: frozenset,
    cam: CameraModel,
    cfg: RenderConfig,
) -> BlendedRender:
    """Render every pixel of the camera's image plane deterministically.

    Depth samples are bin midpoints plus evenly spaced importance draws, so
    two renders of the same scene are identical.
    """
    px, py = full_image_pixels(cam)
    from .cameras import rays_for_pixels

    origins, dirs = rays_for_pixels(cam, px, py)
    origins = origins.reshape(-1, 3)
    dirs = dirs.reshape(-1, 3)
    chunks = []
    with torch.no_grad():
        for start in range(0, origins.shape[0], cfg.chunk_rays):
            sl = slice(start, start + cfg.chunk_rays)
            chunks.append(
                render_rays_blended(
                    base, editable, ops, origins[sl], dirs[sl], cfg,
                    deterministic=True, route_gradients=False, with_grad=False,
                )
            )
    H, W = cam.height, cam.width

    def _stack(attr: str, channels: int) -> torch.Tensor:
        flat = torch.cat([getattr(c, attr) for c in chunks], dim=0)
        return flat.reshape(H, W, channels) if channels > 1 else flat.reshape(H, W)

    return BlendedRender(
        color_original=_stack("color_original", 3),
        color_editable=_stack("color_editable", 3),
        color_blended=_stack("color_blended", 3),
        opacity_add=_stack("opacity_add", 1),
        opacity_remove=_stack("opacity_remove", 1),
        opacity_change=_stack("opacity_change", 1),
    )
