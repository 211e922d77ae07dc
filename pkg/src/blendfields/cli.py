"""Command-line entry points: pretrain, edit, render, evaluate, segment-preview."""

from __future__ import annotations

import dataclasses
import logging
import math
import sys
from pathlib import Path

import click
import numpy as np
import torch
import yaml

from .cameras import CameraModel, look_at_pose
from .config import load_edit_config, pretrain_config_for
from .dataset import load_scene
from .errors import BlendfieldsError, ValidationError
from .fields import load_base_scene, load_edited_scene, save_base_scene, save_edited_scene
from .imageio import load_rgb_over_white, save_image
from .localizer import build_regions, target_region
from .metrics import evaluate as run_evaluate
from .providers import make_embedding_provider, make_segmentation_provider
from .renderer import RenderConfig, render_as_images, render_full_image
from .trainer import edit as run_edit
from .trainer import pretrain_scene, write_training_log

logger = logging.getLogger(__name__)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable info-level logging.")
def cli(verbose: bool):
    """Text-driven localized editing of neural radiance fields."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True), help="Scene directory.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output checkpoint (.npz).")
@click.option("--profile", type=click.Choice(["desk", "full"]), default="desk", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="Optional pretrain overrides (YAML).")
def pretrain(scene_path, out_path, profile, seed, config_path):
    """Fit the frozen base field to a scene and save its checkpoint."""
    overrides = {}
    if config_path:
        overrides = yaml.safe_load(Path(config_path).read_text()) or {}
    overrides.setdefault("seed", seed)
    cfg = pretrain_config_for(profile, overrides)
    dataset = load_scene(scene_path)
    if Path(out_path).exists():
        click.echo(f"checkpoint {out_path} already exists; skipping training")
        return
    scene, psnr = pretrain_scene(dataset, cfg)
    save_base_scene(out_path, scene)
    click.echo(f"saved base checkpoint to {out_path}" + (f" (held-out PSNR {psnr:.2f} dB)" if psnr is not None else ""))


def _providers_from_config(cfg, provider_override):
    seg_name, emb_name = cfg.segmentation_provider, cfg.embedding_provider
    if provider_override == "remote":
        seg_name = emb_name = "remote"
    elif provider_override == "mock":
        seg_name = "mock" if seg_name == "remote" else seg_name
        emb_name = "mock"
    segmentation = make_segmentation_provider(seg_name, cfg.provider_url)
    embedding = make_embedding_provider(emb_name, cfg.provider_url)
    return segmentation, embedding


@cli.command("edit")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True), help="Edit run config (YAML).")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True), help="Base checkpoint.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
@click.option("--scene", "scene_path", type=click.Path(exists=True), default=None, help="Scene whose image size/FOV the cameras copy.")
@click.option("--profile", type=click.Choice(["desk", "full"]), default="full", show_default=True)
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--provider", type=click.Choice(["mock", "remote"]), default=None, help="Overrides the configured providers.")
def edit_command(config_path, checkpoint_path, out_dir, scene_path, profile, seed, provider):
    """Run a localized text-driven edit and save the edited checkpoint."""
    cfg = load_edit_config(config_path, profile)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if scene_path is not None:
        dataset = load_scene(scene_path)
        cfg = dataclasses.replace(
            cfg,
            image_width=dataset.width,
            image_height=dataset.height,
            fov_x_degrees=math.degrees(dataset.fov_x),
        )
    base = load_base_scene(checkpoint_path)
    segmentation, embedding = _providers_from_config(cfg, provider)
    out = Path(out_dir)
    result = run_edit(base, cfg, segmentation, embedding, out_dir=out)
    save_edited_scene(out / "edited.npz", result.scene)
    write_training_log(out / "training_log.jsonl", result.log)
    result.state.save(out / "train_state.pt")
    click.echo(f"edited checkpoint written to {out / 'edited.npz'} ({len(result.log)} steps)")


def _orbit_camera(width: int, height: int, fov_x_degrees: float, azimuth_deg: float, elevation_deg: float, radius: float) -> CameraModel:
    eye = torch.tensor(
        [
            radius * math.cos(math.radians(elevation_deg)) * math.cos(math.radians(azimuth_deg)),
            radius * math.cos(math.radians(elevation_deg)) * math.sin(math.radians(azimuth_deg)),
            radius * math.sin(math.radians(elevation_deg)),
        ]
    )
    focal = 0.5 * width / math.tan(0.5 * math.radians(fov_x_degrees))
    return CameraModel(width=width, height=height, focal=focal, pose=look_at_pose(eye))


def _camera_for_render(scene_path, split, frame_index, width, height, fov, azimuth, elevation, radius):
    if scene_path is not None:
        dataset = load_scene(scene_path)
        frames = dataset.split(split)
        if not frames:
            raise ValidationError(f"scene has no '{split}' frames")
        if not 0 <= frame_index < len(frames):
            raise ValidationError(f"frame index {frame_index} out of range for split '{split}' ({len(frames)} frames)")
        return dataset.camera(frames[frame_index])
    return _orbit_camera(width, height, fov, azimuth, elevation, radius)


def _load_any_scene(checkpoint_path):
    try:
        edited = load_edited_scene(checkpoint_path)
        return edited.base, edited.editable, edited.enabled_operations
    except BlendfieldsError:
        base = load_base_scene(checkpoint_path)
        return base, None, frozenset({"change"})


@cli.command("render")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True), help="Edited or base checkpoint.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--scene", "scene_path", type=click.Path(exists=True), default=None, help="Take the pose from a scene frame.")
@click.option("--split", default="val", show_default=True)
@click.option("--frame", "frame_index", type=int, default=0, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--fov", type=float, default=40.0, show_default=True, help="Horizontal FOV in degrees (orbit pose).")
@click.option("--azimuth", type=float, default=45.0, show_default=True)
@click.option("--elevation", type=float, default=30.0, show_default=True)
@click.option("--radius", type=float, default=4.0, show_default=True)
@click.option("--n-coarse", type=int, default=16, show_default=True)
@click.option("--n-fine", type=int, default=24, show_default=True)
def render_command(checkpoint_path, out_dir, scene_path, split, frame_index, width, height, fov, azimuth, elevation, radius, n_coarse, n_fine):
    """Render the original, editable, and blended images plus the three
    accumulated-opacity maps for one pose (six images)."""
    base, editable, ops = _load_any_scene(checkpoint_path)
    cam = _camera_for_render(scene_path, split, frame_index, width, height, fov, azimuth, elevation, radius)
    cfg = RenderConfig(n_coarse=n_coarse, n_fine=n_fine)
    render = render_full_image(base, editable, ops, cam, cfg)
    out = Path(out_dir)
    for name, image in render_as_images(render).items():
        save_image(out / f"{name}.png", image)
    click.echo(f"wrote 6 images to {out}")


@cli.command("evaluate")
@click.option("--original", "original_dir", required=True, type=click.Path(exists=True), help="Directory of original renders.")
@click.option("--edited", "edited_dir", required=True, type=click.Path(exists=True), help="Directory of edited renders (paired by sorted filename).")
@click.option("--source-text", required=True)
@click.option("--target-text", required=True)
@click.option("--out", "out_path", required=True, type=click.Path(), help="Report file (JSON).")
@click.option("--provider", type=click.Choice(["mock", "remote"]), default="mock", show_default=True)
@click.option("--provider-url", default=None)
def evaluate_command(original_dir, edited_dir, source_text, target_text, out_path, provider, provider_url):
    """Score paired original/edited views and write a metric report."""
    originals = sorted(p for p in Path(original_dir).iterdir() if p.suffix.lower() == ".png")
    edited = sorted(p for p in Path(edited_dir).iterdir() if p.suffix.lower() == ".png")
    if len(originals) != len(edited) or not originals:
        raise ValidationError(f"view counts differ or empty: {len(originals)} original vs {len(edited)} edited")
    embedding = make_embedding_provider(provider, provider_url)
    report = run_evaluate(
        [load_rgb_over_white(p) for p in originals],
        [load_rgb_over_white(p) for p in edited],
        source_text,
        target_text,
        embedding,
    )
    report.save(out_path)
    click.echo(f"D_L1={report.d_l1:.4f} S_CLIP={report.s_clip:.4f} MP_CLIP={report.mp_clip:.4f} -> {out_path}")


@cli.command("segment-preview")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--source-text", required=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--scene", "scene_path", type=click.Path(exists=True), default=None)
@click.option("--split", default="val", show_default=True)
@click.option("--frame", "frame_index", type=int, default=0, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--fov", type=float, default=40.0, show_default=True)
@click.option("--azimuth", type=float, default=45.0, show_default=True)
@click.option("--elevation", type=float, default=30.0, show_default=True)
@click.option("--radius", type=float, default=4.0, show_default=True)
@click.option("--segmenter", type=click.Choice(["mock", "disk", "remote"]), default="mock", show_default=True)
@click.option("--provider-url", default=None)
@click.option("--n-dilations", type=int, default=2, show_default=True)
def segment_preview(checkpoint_path, source_text, out_dir, scene_path, split, frame_index, width, height, fov, azimuth, elevation, radius, segmenter, provider_url, n_dilations):
    """Render the original view and overlay the target/positive/negative masks."""
    base, editable, ops = _load_any_scene(checkpoint_path)
    cam = _camera_for_render(scene_path, split, frame_index, width, height, fov, azimuth, elevation, radius)
    render = render_full_image(base, None, ops, cam, RenderConfig(n_coarse=16, n_fine=24))
    image = render.color_original.clamp(0, 1).numpy()
    provider = make_segmentation_provider(segmenter, provider_url)
    mask = target_region(image, source_text, provider)
    regions = build_regions(mask, n_dilations)
    out = Path(out_dir)
    save_image(out / "original.png", image)
    save_image(out / "mask_target.png", mask.astype(np.float32))
    save_image(out / "mask_positive.png", regions.positive.astype(np.float32))
    save_image(out / "mask_negative.png", regions.negative.astype(np.float32))
    overlay = image.copy()
    overlay[regions.positive] = 0.5 * overlay[regions.positive] + 0.5 * np.array([0.2, 0.9, 0.2])
    overlay[regions.target] = 0.5 * overlay[regions.target] + np.array([0.5, 0.0, 0.0])
    save_image(out / "overlay.png", overlay)
    click.echo(f"wrote mask preview to {out}")


def main(argv=None) -> int:
    """Console entry point mapping errors to exit codes: 1 validation, 2 runtime."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        return 2
    except ValidationError as exc:
        click.echo(f"validation error: {exc}", err=True)
        return 1
    except BlendfieldsError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except Exception as exc:  # pragma: no cover - last-resort guard
        click.echo(f"unexpected error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
