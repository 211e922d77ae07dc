"""Radiance field networks: the frozen base field and the trainable editable field.

Both fields map an encoded position and view direction to per-sample outputs.
The base field produces (density, color); the editable field additionally
produces two blending ratios in [0, 1] controlling how much base density is
removed and how much base color is replaced at that point.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoding import EncodingConfig, encode_direction, encode_position
from .errors import CheckpointError, ValidationError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

DIRECTION_NORM_TOL = 1e-6


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer layout of the base field: ``depth`` hidden layers of ``width``
    units with the input encoding re-concatenated after each index in
    ``skip_layers``."""

    depth: int = 8
    width: int = 256
    skip_layers: tuple[int, ...] = (4,)

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be >= 1")
        if any(s < 1 or s >= self.depth for s in self.skip_layers):
            raise ValueError("skip layers must lie strictly inside the trunk")

    def to_dict(self) -> dict:
        return {"depth": self.depth, "width": self.width, "skip_layers": list(self.skip_layers)}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpArchitecture":
        return cls(depth=int(d["depth"]), width=int(d["width"]), skip_layers=tuple(d["skip_layers"]))


@dataclass(frozen=True)
class EditableArchitecture:
    """Layer layout of the editable field: a residual trunk feeding four heads."""

    width: int = 256
    num_residual_blocks: int = 2
    initial_blend: float = 0.05

    def __post_init__(self):
        if self.width < 1 or self.num_residual_blocks < 0:
            raise ValueError("invalid editable architecture")
        if not 0.0 < self.initial_blend < 1.0:
            raise ValueError("initial_blend must lie strictly inside (0, 1)")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "num_residual_blocks": self.num_residual_blocks,
            "initial_blend": self.initial_blend,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EditableArchitecture":
        return cls(
            width=int(d["width"]),
            num_residual_blocks=int(d["num_residual_blocks"]),
            initial_blend=float(d["initial_blend"]),
        )


@dataclass
class FieldOutput:
    """Per-sample outputs of the base field. Tensors share leading batch shape:
    density [...], color [..., 3]."""

    density: torch.Tensor
    color: torch.Tensor


@dataclass
class EditableOutput:
    """Per-sample outputs of the editable field: density [...], color [..., 3],
    density_blend [...], color_blend [...] (blend ratios in [0, 1])."""

    density: torch.Tensor
    color: torch.Tensor
    density_blend: torch.Tensor
    color_blend: torch.Tensor


class BaseField(nn.Module):
    """Standard coordinate MLP: encoded position through a skip-connected trunk,
    density from the trunk (ReLU), color from a direction-conditioned branch
    (sigmoid)."""

    def __init__(self, architecture: MlpArchitecture | None = None, encoding: EncodingConfig | None = None):
        super().__init__()
        self.architecture = architecture or MlpArchitecture()
        self.encoding = encoding or EncodingConfig()
        in_pos = self.encoding.position_dim()
        in_dir = self.encoding.direction_dim()
        width = self.architecture.width

        layers = []
        in_features = in_pos
        for i in range(self.architecture.depth):
            layers.append(nn.Linear(in_features, width))
            in_features = width + in_pos if (i + 1) in self.architecture.skip_layers else width
        self.trunk = nn.ModuleList(layers)

        self.density_head = nn.Linear(width, 1)
        self.feature = nn.Linear(width, width)
        self.color_hidden = nn.Linear(width + in_dir, width // 2)
        self.color_head = nn.Linear(width // 2, 3)

    def forward(self, x: torch.Tensor, d: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """x [..., 3] positions, d [..., 3] unit directions -> (density [...], color [..., 3])."""
        enc_x = encode_position(x, self.encoding)
        enc_d = encode_direction(d, self.encoding)
        h = enc_x
        for i, layer in enumerate(self.trunk):
            h = F.relu(layer(h))
            if (i + 1) in self.architecture.skip_layers:
                h = torch.cat([h, enc_x], dim=-1)
        density = F.relu(self.density_head(h)).squeeze(-1)
        feat = self.feature(h)
        color = torch.sigmoid(self.color_head(F.relu(self.color_hidden(torch.cat([feat, enc_d], dim=-1)))))
        return density, color


class ResidualBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.fc1 = nn.Linear(width, width)
        self.fc2 = nn.Linear(width, width)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return F.relu(h + self.fc2(F.relu(self.fc1(h))))


class EditableField(nn.Module):
    """Residual-trunk field with four heads: density (ReLU), color
    (direction-conditioned, sigmoid), and two blend ratios (sigmoid).

    The blend heads are position-only so removal geometry stays
    view-consistent. Initialization keeps the initial blended render close to
    the base render: density near zero, blend ratios near ``initial_blend``.
    """

    def __init__(self, architecture: EditableArchitecture | None = None, encoding: EncodingConfig | None = None):
        super().__init__()
        self.architecture = architecture or EditableArchitecture()
        self.encoding = encoding or EncodingConfig()
        in_pos = self.encoding.position_dim()
        in_dir = self.encoding.direction_dim()
        width = self.architecture.width

        self.input_layer = nn.Linear(in_pos, width)
        self.blocks = nn.ModuleList(ResidualBlock(width) for _ in range(self.architecture.num_residual_blocks))

        self.density_head = nn.Linear(width, 1)
        self.density_blend_head = nn.Linear(width, 1)
        self.color_blend_head = nn.Linear(width, 1)
        self.feature = nn.Linear(width, width)
        self.color_hidden = nn.Linear(width + in_dir, width // 2)
        self.color_head = nn.Linear(width // 2, 3)

        self._init_heads()

    def _init_heads(self):
        # Small random density head: near-zero initial densities without the
        # dead-gradient of an exactly-zero ReLU pre-activation.
        nn.init.normal_(self.density_head.weight, std=1e-2)
        nn.init.zeros_(self.density_head.bias)
        blend_logit = math.log(self.architecture.initial_blend / (1.0 - self.architecture.initial_blend))
        for head in (self.density_blend_head, self.color_blend_head):
            nn.init.zeros_(head.weight)
            nn.init.constant_(head.bias, blend_logit)

    def forward(self, x: torch.Tensor, d: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """-> (density [...], color [..., 3], density_blend [...], color_blend [...])."""
        enc_x = encode_position(x, self.encoding)
        enc_d = encode_direction(d, self.encoding)
        h = F.relu(self.input_layer(enc_x))
        for block in self.blocks:
            h = block(h)
        density = F.relu(self.density_head(h)).squeeze(-1)
        density_blend = torch.sigmoid(self.density_blend_head(h)).squeeze(-1)
        color_blend = torch.sigmoid(self.color_blend_head(h)).squeeze(-1)
        feat = self.feature(h)
        color = torch.sigmoid(self.color_head(F.relu(self.color_hidden(torch.cat([feat, enc_d], dim=-1)))))
        return density, color, density_blend, color_blend


def _validated_inputs(x: torch.Tensor, d: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if not torch.isfinite(x).all() or not torch.isfinite(d).all():
        raise ValidationError("field evaluation requires finite inputs")
    norms = torch.linalg.vector_norm(d, dim=-1, keepdim=True)
    if (norms <= 0).any():
        raise ValidationError("zero-length view direction")
    if (norms - 1.0).abs().max() > DIRECTION_NORM_TOL:
        logger.warning("view directions not unit-norm (max dev %.3e); normalizing", float((norms - 1.0).abs().max()))
        d = d / norms
    return x, d


def eval_base(field: BaseField, x: torch.Tensor, d: torch.Tensor) -> FieldOutput:
    """Evaluate the frozen base field at positions x with directions d.

    Directions off unit norm by more than 1e-6 are normalized with a warning.
    """
    x, d = _validated_inputs(x, d)
    if not all(torch.isfinite(p).all() for p in field.parameters()):
        raise ValidationError("base field has non-finite parameters")
    density, color = field(x, d)
    return FieldOutput(density=density, color=color)


def eval_editable(field: EditableField, x: torch.Tensor, d: torch.Tensor) -> EditableOutput:
    """Evaluate the editable field; same input validation as :func:`eval_base`."""
    x, d = _validated_inputs(x, d)
    if not all(torch.isfinite(p).all() for p in field.parameters()):
        raise ValidationError("editable field has non-finite parameters")
    density, color, density_blend, color_blend = field(x, d)
    return EditableOutput(density=density, color=color, density_blend=density_blend, color_blend=color_blend)


def freeze(module: nn.Module) -> nn.Module:
    module.requires_grad_(False)
    module.eval()
    return module


def parameter_fingerprint(module: nn.Module) -> str:
    """sha256 over the module's parameters, for frozen-weights assertions."""
    digest = hashlib.sha256()
    for name, param in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(param.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


# --- checkpoints -------------------------------------------------------------
#
# A checkpoint is an .npz archive holding a JSON manifest (format version,
# architecture descriptors, encoding config, scene metadata) plus a flat
# "<module>.<param>" -> float32 array payload.


@dataclass
class BaseScene:
    """A trained base field pair (coarse + fine) with its rendering metadata."""

    coarse: BaseField
    fine: BaseField
    encoding: EncodingConfig
    architecture: MlpArchitecture
    near: float = 2.0
    far: float = 6.0

    def freeze(self) -> "BaseScene":
        freeze(self.coarse)
        freeze(self.fine)
        return self


@dataclass
class EditedScene:
    """A base scene plus the trained editable field and its operation gates."""

    base: BaseScene
    editable: EditableField
    enabled_operations: frozenset = dataclass_field(default_factory=lambda: frozenset({"add", "remove", "change"}))


def _flatten_params(modules: dict[str, nn.Module]) -> dict[str, np.ndarray]:
    flat = {}
    for prefix, module in modules.items():
        for name, tensor in module.state_dict().items():
            flat[f"{prefix}.{name}"] = tensor.detach().cpu().numpy().astype(np.float32)
    return flat


def _write_npz(path: Path, manifest: dict, params: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    np.savez(buf, __manifest__=np.frombuffer(json.dumps(manifest).encode(), dtype=np.uint8), **params)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue())


def _read_npz(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path) as archive:
        if "__manifest__" not in archive:
            raise CheckpointError(f"{path} is not a field checkpoint (missing manifest)")
        manifest = json.loads(bytes(archive["__manifest__"]).decode())
        params = {k: archive[k] for k in archive.files if k != "__manifest__"}
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version!r}")
    return manifest, params


def _load_module_params(module: nn.Module, prefix: str, params: dict[str, np.ndarray]) -> None:
    state = module.state_dict()
    expected = {f"{prefix}.{name}" for name in state}
    present = {k for k in params if k.startswith(prefix + ".")}
    missing = expected - present
    extra = present - expected
    if missing or extra:
        raise CheckpointError(f"parameter names do not match module '{prefix}': missing={sorted(missing)[:4]} extra={sorted(extra)[:4]}")
    new_state = {}
    for name, tensor in state.items():
        arr = params[f"{prefix}.{name}"]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise CheckpointError(f"shape mismatch for {prefix}.{name}: checkpoint {arr.shape} vs model {tuple(tensor.shape)}")
        if not np.isfinite(arr).all():
            raise CheckpointError(f"non-finite parameters in {prefix}.{name}")
        new_state[name] = torch.from_numpy(arr.copy())
    module.load_state_dict(new_state)


def save_base_scene(path: str | Path, scene: BaseScene) -> None:
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "base",
        "encoding": {
            "num_freqs_position": scene.encoding.num_freqs_position,
            "num_freqs_direction": scene.encoding.num_freqs_direction,
            "include_identity": scene.encoding.include_identity,
        },
        "architecture": scene.architecture.to_dict(),
        "near": scene.near,
        "far": scene.far,
    }
    _write_npz(Path(path), manifest, _flatten_params({"coarse": scene.coarse, "fine": scene.fine}))


def _encoding_from_manifest(manifest: dict) -> EncodingConfig:
    enc = manifest["encoding"]
    return EncodingConfig(
        num_freqs_position=int(enc["num_freqs_position"]),
        num_freqs_direction=int(enc["num_freqs_direction"]),
        include_identity=bool(enc["include_identity"]),
    )


def _base_scene_from(manifest: dict, params: dict[str, np.ndarray]) -> BaseScene:
    encoding = _encoding_from_manifest(manifest)
    architecture = MlpArchitecture.from_dict(manifest["architecture"])
    coarse = BaseField(architecture, encoding)
    fine = BaseField(architecture, encoding)
    _load_module_params(coarse, "coarse", params)
    _load_module_params(fine, "fine", params)
    scene = BaseScene(
        coarse=coarse,
        fine=fine,
        encoding=encoding,
        architecture=architecture,
        near=float(manifest["near"]),
        far=float(manifest["far"]),
    )
    return scene.freeze()


def load_base_scene(path: str | Path) -> BaseScene:
    manifest, params = _read_npz(Path(path))
    if manifest.get("kind") != "base":
        raise CheckpointError(f"expected a base-field checkpoint, got kind={manifest.get('kind')!r}")
    return _base_scene_from(manifest, params)


def save_edited_scene(path: str | Path, scene: EditedScene) -> None:
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "edited",
        "encoding": {
            "num_freqs_position": scene.base.encoding.num_freqs_position,
            "num_freqs_direction": scene.base.encoding.num_freqs_direction,
            "include_identity": scene.base.encoding.include_identity,
        },
        "architecture": scene.base.architecture.to_dict(),
        "editable_architecture": scene.editable.architecture.to_dict(),
        "enabled_operations": sorted(scene.enabled_operations),
        "near": scene.base.near,
        "far": scene.base.far,
    }
    params = _flatten_params({"coarse": scene.base.coarse, "fine": scene.base.fine, "editable": scene.editable})
    _write_npz(Path(path), manifest, params)


def load_edited_scene(path: str | Path) -> EditedScene:
    manifest, params = _read_npz(Path(path))
    if manifest.get("kind") != "edited":
        raise CheckpointError(f"expected an edited-scene checkpoint, got kind={manifest.get('kind')!r}")
    base = _base_scene_from(manifest, params)
    editable = EditableField(EditableArchitecture.from_dict(manifest["editable_architecture"]), base.encoding)
    _load_module_params(editable, "editable", params)
    ops = frozenset(manifest["enabled_operations"])
    if not ops or not ops <= {"add", "remove", "change"}:
        raise CheckpointError(f"invalid enabled_operations in checkpoint: {sorted(ops)}")
    return EditedScene(base=base, editable=editable, enabled_operations=ops)
