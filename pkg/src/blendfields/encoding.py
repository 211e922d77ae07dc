"""Sinusoidal positional encoding for field inputs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class EncodingConfig:
    """Frequency counts for position/direction encodings.

    ``num_freqs_position`` / ``num_freqs_direction`` are the number of
    octaves L; each contributes a sin and a cos term per input component.
    With ``include_identity`` the raw input is prepended.
    """

    num_freqs_position: int = 10
    num_freqs_direction: int = 4
    include_identity: bool = True

    def __post_init__(self):
        if self.num_freqs_position < 0 or self.num_freqs_direction < 0:
            raise ValueError("frequency counts must be >= 0")

    def output_dim(self, input_dim: int, num_freqs: int) -> int:
        return input_dim * (int(self.include_identity) + 2 * num_freqs)

    def position_dim(self, input_dim: int = 3) -> int:
        return self.output_dim(input_dim, self.num_freqs_position)

    def direction_dim(self, input_dim: int = 3) -> int:
        return self.output_dim(input_dim, self.num_freqs_direction)


def positional_encode(v: torch.Tensor, num_freqs: int, include_identity: bool = True) -> torch.Tensor:
    """Encode ``v`` as [v?, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(L-1) pi v), cos(2^(L-1) pi v)].

    ``v`` may carry leading batch dimensions; encoding applies to the last axis.
    Raises ValueError on non-finite input.
    """
    if not torch.isfinite(v).all():
        raise ValueError("positional_encode: input contains non-finite values")
    parts = []
    if include_identity:
        parts.append(v)
    for level in range(num_freqs):
        scaled = v * (2.0 ** level * math.pi)
        parts.append(torch.sin(scaled))
        parts.append(torch.cos(scaled))
    if not parts:
        return v.new_zeros(v.shape[:-1] + (0,))
    return torch.cat(parts, dim=-1)


def encode_position(v: torch.Tensor, cfg: EncodingConfig) -> torch.Tensor:
    return positional_encode(v, cfg.num_freqs_position, cfg.include_identity)


def encode_direction(v: torch.Tensor, cfg: EncodingConfig) -> torch.Tensor:
    return positional_encode(v, cfg.num_freqs_direction, cfg.include_identity)
