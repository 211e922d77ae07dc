"""Scene datasets: the camera-manifest format, validation, and a procedural
two-sphere scene small enough to fit and edit on a CPU in minutes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .cameras import CameraModel, look_at_pose
from .compositing import composite_original
from .errors import ValidationError
from .fields import FieldOutput
from .imageio import load_rgb_over_white, save_image
from .sampling import deltas_from_depths, full_image_pixels, stratified_depths

ROTATION_ORTHO_TOL = 1e-4
SPLITS = ("train", "val", "test")


@dataclass
class Frame:
    pose: np.ndarray  # [4, 4] camera-to-world
    image: np.ndarray  # [H, W, 3] float in [0, 1], composited over white
    split: str
    name: str = ""


@dataclass
class SceneDataset:
    frames: list[Frame]
    fov_x: float  # shared horizontal field of view, radians
    width: int
    height: int

    def split(self, name: str) -> list[Frame]:
        return [f for f in self.frames if f.split == name]

    def camera(self, frame: Frame) -> CameraModel:
        return CameraModel.from_fov(self.width, self.height, self.fov_x, torch.from_numpy(frame.pose.astype(np.float32)))


def _check_pose(matrix: np.ndarray, context: str) -> np.ndarray:
    if matrix.shape != (4, 4):
        raise ValidationError(f"{context}: transform must be 4x4, got {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise ValidationError(f"{context}: transform contains non-finite values")
    rot = matrix[:3, :3]
    if np.abs(rot @ rot.T - np.eye(3)).max() > ROTATION_ORTHO_TOL:
        raise ValidationError(f"{context}: rotation is not orthonormal within {ROTATION_ORTHO_TOL}")
    return matrix


def load_scene(path: str | Path) -> SceneDataset:
    """Read a scene directory: per-split ``transforms_<split>.json`` manifests
    (camera_angle_x plus per-frame file_path and transform_matrix) and image
    files, alpha-composited over white."""
    path = Path(path)
    frames: list[Frame] = []
    fov = None
    size = None
    found_any = False
    for split in SPLITS:
        manifest_path = path / f"transforms_{split}.json"
        if not manifest_path.exists():
            continue
        found_any = True
        try:
            manifest = json.loads(manifest_path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed manifest {manifest_path}: {exc}") from exc
        if "camera_angle_x" not in manifest:
            raise ValidationError(f"{manifest_path} is missing camera_angle_x")
        split_fov = float(manifest["camera_angle_x"])
        if fov is None:
            fov = split_fov
        elif abs(fov - split_fov) > 1e-9:
            raise ValidationError("splits disagree on camera_angle_x")
        for entry in manifest.get("frames", []):
            file_path = entry.get("file_path", "")
            image_path = path / file_path
            if image_path.suffix == "":
                image_path = image_path.with_suffix(".png")
            if not image_path.exists():
                raise ValidationError(f"missing frame image: {image_path}")
            pose = _check_pose(np.asarray(entry["transform_matrix"], dtype=np.float64), str(image_path))
            image = load_rgb_over_white(image_path)
            if size is None:
                size = image.shape[:2]
            elif image.shape[:2] != size:
                raise ValidationError(f"{image_path}: image size {image.shape[:2]} differs from {size}")
            frames.append(Frame(pose=pose, image=image, split=split, name=file_path))
    if not found_any:
        raise ValidationError(f"no transforms_<split>.json manifest found under {path}")
    if not frames:
        raise ValidationError(f"scene at {path} has no frames")
    return SceneDataset(frames=frames, fov_x=fov, width=size[1], height=size[0])


def save_scene(path: str | Path, dataset: SceneDataset) -> None:
    """Write a dataset in the manifest format read by :func:`load_scene`."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        frames = dataset.split(split)
        if not frames:
            continue
        entries = []
        for i, frame in enumerate(frames):
            name = frame.name or f"{split}/r_{i}"
            save_image(path / f"{name}.png", frame.image)
            entries.append({"file_path": name, "transform_matrix": frame.pose.tolist()})
        manifest = {"camera_angle_x": dataset.fov_x, "frames": entries}
        (path / f"transforms_{split}.json").write_text(json.dumps(manifest, indent=1))


# --- procedural two-sphere scene ----------------------------------------------


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    color: tuple[float, float, float]


@dataclass(frozen=True)
class DeskSceneSpec:
    """Two flat-colored spheres on a white background: a red one (the default
    edit target) and a blue one. Colors match the mock providers' lookup table
    so text queries select them cleanly."""

    spheres: tuple[Sphere, ...] = (
        Sphere(center=(-0.7, 0.0, 0.0), radius=0.45, color=(0.9, 0.15, 0.1)),
        Sphere(center=(0.7, 0.0, 0.0), radius=0.35, color=(0.15, 0.25, 0.9)),
    )
    density: float = 40.0
    edge_width: float = 0.04
    radius_cameras: float = 4.0
    near: float = 2.0
    far: float = 6.0
    image_size: int = 64
    fov_x: float = math.radians(40.0)
    gt_samples: int = 160


def desk_field(points: torch.Tensor, spec: DeskSceneSpec) -> FieldOutput:
    """Analytic density/color of the two-sphere scene at world points [..., 3].

    Density ramps linearly over ``edge_width`` at each sphere boundary so the
    scene is learnable by a smooth MLP.
    """
    density = torch.zeros(points.shape[:-1])
    color = torch.ones(points.shape[:-1] + (3,))
    for sphere in spec.spheres:
        center = torch.tensor(sphere.center)
        dist = torch.linalg.vector_norm(points - center, dim=-1)
        inside = ((sphere.radius - dist) / spec.edge_width).clamp(0.0, 1.0)
        occupancy = inside * spec.density
        take = occupancy > density
        density = torch.where(take, occupancy, density)
        color = torch.where(take.unsqueeze(-1), torch.tensor(sphere.color).expand_as(color), color)
    return FieldOutput(density=density, color=color)


def _render_analytic(cam: CameraModel, spec: DeskSceneSpec) -> np.ndarray:
    from .cameras import rays_for_pixels

    px, py = full_image_pixels(cam)
    origins, dirs = rays_for_pixels(cam, px, py)
    origins = origins.reshape(-1, 3)
    dirs = dirs.reshape(-1, 3)
    depths = stratified_depths(spec.near, spec.far, spec.gt_samples, (origins.shape[0],), deterministic=True)
    points = origins.unsqueeze(1) + depths.unsqueeze(-1) * dirs.unsqueeze(1)
    out = desk_field(points, spec)
    color, acc = composite_original(out, deltas_from_depths(depths, spec.far))
    color = color + (1.0 - acc).unsqueeze(-1)  # white background
    return color.reshape(cam.height, cam.width, 3).numpy()


def _desk_poses(count: int, spec: DeskSceneSpec, phase: float) -> list[np.ndarray]:
    golden = math.pi * (3.0 - math.sqrt(5.0))
    poses = []
    for i in range(count):
        azimuth = phase + i * golden
        elevation = math.radians(10.0 + 50.0 * ((i * 0.37 + phase) % 1.0))
        eye = torch.tensor(
            [
                spec.radius_cameras * math.cos(elevation) * math.cos(azimuth),
                spec.radius_cameras * math.cos(elevation) * math.sin(azimuth),
                spec.radius_cameras * math.sin(elevation),
            ]
        )
        poses.append(look_at_pose(eye).numpy().astype(np.float64))
    return poses


def make_desk_scene(spec: DeskSceneSpec | None = None, n_train: int = 20, n_val: int = 4, n_test: int = 0) -> SceneDataset:
    """Generate the procedural desk scene: deterministic poses on the upper
    hemisphere plus analytically rendered ground-truth images."""
    spec = spec or DeskSceneSpec()
    frames = []
    for split, count, phase in (("train", n_train, 0.0), ("val", n_val, 0.5), ("test", n_test, 1.1)):
        for i, pose in enumerate(_desk_poses(count, spec, phase)):
            cam = CameraModel.from_fov(spec.image_size, spec.image_size, spec.fov_x, torch.from_numpy(pose.astype(np.float32)))
            image = _render_analytic(cam, spec)
            frames.append(Frame(pose=pose, image=image, split=split, name=f"{split}/r_{i}"))
    return SceneDataset(frames=frames, fov_x=spec.fov_x, width=spec.image_size, height=spec.image_size)
