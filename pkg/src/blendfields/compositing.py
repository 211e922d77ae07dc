"""Front-to-back compositing of the base field, the editable field, and their blend.

All functions are pure tensor ops over sample batches shaped [..., K]
(colors [..., K, 3]) ordered by depth, so rays can carry arbitrary leading
batch dimensions.

Gradient routing: the three accumulated-opacity channels are, by contract,
sensitive to exactly one editable quantity each — added opacity to the
editable density, removed opacity to the density blend ratio, changed
opacity to the color blend ratio. ``route_gradients=True`` detaches every
other factor inside those channels; the values are unchanged, only the
backward graph is restricted. The color composites are never restricted.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .fields import EditableOutput, FieldOutput

EMPTY_RAY_EPS = 1e-8


def alpha_from_density(density: torch.Tensor, deltas: torch.Tensor) -> torch.Tensor:
    """Per-sample opacity 1 - exp(-density * delta)."""
    return 1.0 - torch.exp(-density * deltas)


def transmittance(alpha: torch.Tensor) -> torch.Tensor:
    """Exclusive product of (1 - alpha) along the sample axis; T_1 = 1."""
    shifted = torch.cat([torch.ones_like(alpha[..., :1]), 1.0 - alpha[..., :-1]], dim=-1)
    return torch.cumprod(shifted, dim=-1)


def blend_samples(base: FieldOutput, edit: EditableOutput) -> tuple[torch.Tensor, torch.Tensor]:
    """Modified base density and color after applying the blend ratios.

    density' = (1 - density_blend) * density
    color'   = (1 - color_blend) * color + color_blend * editable color
    """
    density_prime = (1.0 - edit.density_blend) * base.density
    bc = edit.color_blend.unsqueeze(-1)
    color_prime = (1.0 - bc) * base.color + bc * edit.color
    return density_prime, color_prime


def composite_original(base: FieldOutput, deltas: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Base-field color and accumulated opacity of each ray (no background)."""
    alpha = alpha_from_density(base.density, deltas)
    trans = transmittance(alpha)
    weights = trans * alpha
    color = (weights.unsqueeze(-1) * base.color).sum(dim=-2)
    return color, weights.sum(dim=-1)


@dataclass
class BlendedSamples:
    """Per-ray results of compositing the blended volume.

    Colors are raw (not background-composited, not clamped). ``weights_blend``
    holds the per-sample T * alpha of the blended volume, used as importance
    weights by the hierarchical sampler.
    """

    color_blended: torch.Tensor  # [..., 3]
    color_editable: torch.Tensor  # [..., 3]
    color_original: torch.Tensor  # [..., 3]
    opacity_add: torch.Tensor  # [...]
    opacity_remove: torch.Tensor  # [...]
    opacity_change: torch.Tensor  # [...]
    acc_original: torch.Tensor  # [...]
    acc_blended: torch.Tensor  # [...]
    weights_blend: torch.Tensor  # [..., K]


def composite_blended(
    base: FieldOutput,
    edit: EditableOutput,
    deltas: torch.Tensor,
    route_gradients: bool = True,
) -> BlendedSamples:
    """Composite one sample batch through the blending operations.

    Produces the blended and editable colors, the base color, and the three
    accumulated opacities (added / removed / changed), plus the accumulated
    opacities needed for background compositing.
    """
    density_prime, color_prime = blend_samples(base, edit)

    alpha_o = alpha_from_density(base.density, deltas)
    alpha_op = alpha_from_density(density_prime, deltas)
    alpha_e = alpha_from_density(edit.density, deltas)
    alpha_b = alpha_from_density(density_prime + edit.density, deltas)

    trans_o = transmittance(alpha_o)
    trans_b = transmittance(alpha_b)

    weights_blend = trans_b * alpha_b
    bc = edit.color_blend.unsqueeze(-1)

    color_blended = (trans_b.unsqueeze(-1) * (alpha_op.unsqueeze(-1) * color_prime + alpha_e.unsqueeze(-1) * edit.color)).sum(dim=-2)
    color_editable = ((trans_b * (alpha_op * edit.color_blend + alpha_e)).unsqueeze(-1) * edit.color).sum(dim=-2)
    color_original = (trans_o * alpha_o).unsqueeze(-1).mul(base.color).sum(dim=-2)

    if route_gradients:
        # Added opacity: gradient only through the editable density.
        density_prime_const = density_prime.detach()
        alpha_e_add = alpha_from_density(edit.density, deltas)
        trans_b_add = transmittance(alpha_from_density(density_prime_const + edit.density, deltas))
        opacity_add = (trans_b_add * alpha_e_add).sum(dim=-1)

        # Removed opacity: gradient only through the density blend ratio.
        density_r = (1.0 - edit.density_blend) * base.density.detach()
        trans_op_r = transmittance(alpha_from_density(density_r, deltas))
        alpha_o_const = alpha_o.detach()
        trans_o_const = trans_o.detach()
        numerator = ((trans_op_r - trans_o_const) * alpha_o_const).sum(dim=-1)
        denominator = alpha_o_const.sum(dim=-1)

        # Changed opacity: gradient only through the color blend ratio.
        opacity_change = (trans_b.detach() * alpha_op.detach() * edit.color_blend).sum(dim=-1)
    else:
        opacity_add = (trans_b * alpha_e).sum(dim=-1)
        trans_op = transmittance(alpha_op)
        numerator = ((trans_op - trans_o) * alpha_o).sum(dim=-1)
        denominator = alpha_o.sum(dim=-1)
        opacity_change = (trans_b * alpha_op * edit.color_blend).sum(dim=-1)

    opacity_remove = torch.where(
        denominator > EMPTY_RAY_EPS,
        numerator / denominator.clamp_min(EMPTY_RAY_EPS),
        torch.zeros_like(denominator),
    )

    return BlendedSamples(
        color_blended=color_blended,
        color_editable=color_editable,
        color_original=color_original,
        opacity_add=opacity_add,
        opacity_remove=opacity_remove,
        opacity_change=opacity_change,
        acc_original=(trans_o * alpha_o).sum(dim=-1),
        acc_blended=weights_blend.sum(dim=-1),
        weights_blend=weights_blend,
    )
