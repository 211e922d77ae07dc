"""Camera models, pose sampling over the upper hemisphere, and ray generation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ValidationError


@dataclass
class CameraModel:
    """Pinhole camera: intrinsics in pixels plus a rigid camera-to-world pose.

    The camera frame follows the synthetic-360 convention: x right, y up,
    camera looks along -z.
    """

    width: int
    height: int
    focal: float
    pose: torch.Tensor  # [4, 4] camera-to-world
    principal_point: tuple[float, float] | None = None

    def __post_init__(self):
        if self.focal <= 0:
            raise ValidationError("focal length must be positive")
        if self.width < 1 or self.height < 1:
            raise ValidationError("image dimensions must be positive")
        self.pose = torch.as_tensor(self.pose, dtype=torch.float32)
        if self.pose.shape != (4, 4):
            raise ValidationError(f"pose must be 4x4, got {tuple(self.pose.shape)}")
        if self.principal_point is None:
            self.principal_point = (self.width / 2.0, self.height / 2.0)

    @property
    def position(self) -> torch.Tensor:
        return self.pose[:3, 3]

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_radians: float, pose: torch.Tensor) -> "CameraModel":
        focal = 0.5 * width / math.tan(0.5 * fov_x_radians)
        return cls(width=width, height=height, focal=focal, pose=pose)

    def fov_x(self) -> float:
        return 2.0 * math.atan(0.5 * self.width / self.focal)


@dataclass(frozen=True)
class PoseBounds:
    """Spherical band the training cameras are drawn from: radius range plus
    an elevation range in degrees above the horizontal plane."""

    radius_min: float = 4.0
    radius_max: float = 4.0
    elevation_min_deg: float = -5.0
    elevation_max_deg: float = 85.0

    def __post_init__(self):
        if not (0 < self.radius_min <= self.radius_max):
            raise ValidationError("radius bounds must satisfy 0 < min <= max")
        if not (-90.0 <= self.elevation_min_deg <= self.elevation_max_deg <= 90.0):
            raise ValidationError("elevation bounds must satisfy -90 <= min <= max <= 90")


def look_at_pose(eye: torch.Tensor, target: torch.Tensor | None = None, world_up: torch.Tensor | None = None) -> torch.Tensor:
    """Camera-to-world matrix with the camera at ``eye`` looking at ``target``.

    Uses world up (+z) to fix roll; falls back to +x when the view direction
    is parallel to up.
    """
    eye = torch.as_tensor(eye, dtype=torch.float32)
    target = torch.zeros(3) if target is None else torch.as_tensor(target, dtype=torch.float32)
    world_up = torch.tensor([0.0, 0.0, 1.0]) if world_up is None else torch.as_tensor(world_up, dtype=torch.float32)

    forward = target - eye
    norm = torch.linalg.vector_norm(forward)
    if norm < 1e-12:
        raise ValidationError("camera eye coincides with look-at target")
    forward = forward / norm
    z_axis = -forward  # camera looks along -z
    x_axis = torch.linalg.cross(world_up, z_axis)
    if torch.linalg.vector_norm(x_axis) < 1e-8:
        x_axis = torch.tensor([1.0, 0.0, 0.0])
    x_axis = x_axis / torch.linalg.vector_norm(x_axis)
    y_axis = torch.linalg.cross(z_axis, x_axis)

    pose = torch.eye(4)
    pose[:3, 0] = x_axis
    pose[:3, 1] = y_axis
    pose[:3, 2] = z_axis
    pose[:3, 3] = eye
    return pose


def sample_camera_pose(
    rng: torch.Generator,
    bounds: PoseBounds,
    width: int,
    height: int,
    focal: float,
) -> CameraModel:
    """Draw a camera on the spherical band given by ``bounds``, looking at the origin.

    The position is area-uniform over the band: azimuth uniform in [0, 2pi),
    sin(elevation) uniform over its range, radius uniform over its range.
    """
    u = torch.rand(3, generator=rng)
    azimuth = 2.0 * math.pi * u[0].item()
    sin_lo = math.sin(math.radians(bounds.elevation_min_deg))
    sin_hi = math.sin(math.radians(bounds.elevation_max_deg))
    elevation = math.asin(sin_lo + (sin_hi - sin_lo) * u[1].item())
    radius = bounds.radius_min + (bounds.radius_max - bounds.radius_min) * u[2].item()

    eye = torch.tensor(
        [
            radius * math.cos(elevation) * math.cos(azimuth),
            radius * math.cos(elevation) * math.sin(azimuth),
            radius * math.sin(elevation),
        ]
    )
    return CameraModel(width=width, height=height, focal=focal, pose=look_at_pose(eye))


def rays_for_pixels(cam: CameraModel, px: torch.Tensor, py: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """World-space origins and unit directions for pixel centers (px, py).

    ``px``/``py`` are same-shape index tensors (column, row); returns
    (origins [..., 3], directions [..., 3]).
    """
    cx, cy = cam.principal_point
    dirs_cam = torch.stack(
        [
            (px.float() + 0.5 - cx) / cam.focal,
            -(py.float() + 0.5 - cy) / cam.focal,
            -torch.ones_like(px, dtype=torch.float32),
        ],
        dim=-1,
    )
    rotation = cam.pose[:3, :3]
    dirs_world = dirs_cam @ rotation.T
    dirs_world = dirs_world / torch.linalg.vector_norm(dirs_world, dim=-1, keepdim=True)
    origins = cam.position.expand_as(dirs_world)
    return origins, dirs_world
