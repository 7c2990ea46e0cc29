"""Checkpoint directories: a JSON manifest plus one raw little-endian array file per tensor."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, ValidationError
from torch import nn

from auxvae.config import AblationSetting, EncoderConfig, InferenceConfig
from auxvae.errors import CheckpointError
from auxvae.model import AuxVAE
from auxvae.models import NormalizationStats
from auxvae.version import __version__

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


class TensorEntry(BaseModel):
    name: str
    file: str
    dtype: str
    shape: List[int]


class OptimizerMeta(BaseModel):
    lr: float
    betas: Tuple[float, float]
    eps: float
    weight_decay: float
    step_count: int


class CheckpointManifest(BaseModel):
    """Everything needed to rebuild, verify and resume a model."""

    model_config = ConfigDict(protected_namespaces=())

    code_version: str = __version__
    model_hash: str
    run_hash: str = ""
    seed: int = 0
    fold: str = ""
    repeat: int = 0
    epoch: int = 0
    model: EncoderConfig
    setting: AblationSetting
    num_channels: int
    num_styles: int
    normalization: Optional[NormalizationStats] = None
    inference: Optional[InferenceConfig] = None
    optimizer: Optional[OptimizerMeta] = None
    parameters: List[TensorEntry] = []
    buffers: List[TensorEntry] = []
    moments: List[TensorEntry] = []
    rng: List[TensorEntry] = []
    history: List[Dict[str, Any]] = []


@dataclass
class Checkpoint:
    manifest: CheckpointManifest
    parameters: Dict[str, torch.Tensor]
    buffers: Dict[str, torch.Tensor]
    moments: Dict[str, torch.Tensor] = field(default_factory=dict)
    rng: Dict[str, torch.Tensor] = field(default_factory=dict)


def _write(directory: Path, group: str, name: str, tensor: torch.Tensor) -> TensorEntry:
    array = tensor.detach().cpu().contiguous().numpy()
    array = array.astype(array.dtype.newbyteorder("<"), copy=False)
    relative = f"{group}/{name}.bin"
    (directory / relative).write_bytes(array.tobytes())
    return TensorEntry(name=name, file=relative, dtype=array.dtype.str, shape=list(array.shape))


def _read(directory: Path, entry: TensorEntry) -> torch.Tensor:
    try:
        array = np.frombuffer((directory / entry.file).read_bytes(), dtype=np.dtype(entry.dtype))
        array = array.reshape(entry.shape).astype(array.dtype.newbyteorder("="))
    except (OSError, ValueError, TypeError) as e:
        raise CheckpointError(f"cannot read {entry.file}: {e}") from e
    return torch.from_numpy(array.copy())


def save_checkpoint(
    path: Path,
    model: nn.Module,
    optimizer: Optional[torch.optim.Optimizer],
    manifest: CheckpointManifest,
    generators: Optional[Dict[str, torch.Generator]] = None,
) -> Path:
    """Write model weights, buffers, Adam moments and RNG states under ``path``.

    The manifest's tensor listings are filled in here; the caller provides the
    identity fields (hashes, configs, epoch, normalization).
    """
    directory = Path(path)
    for group in ("parameters", "buffers", "moments", "rng"):
        (directory / group).mkdir(parents=True, exist_ok=True)

    param_entries = [_write(directory, "parameters", n, p) for n, p in model.named_parameters()]
    buffer_entries = [_write(directory, "buffers", n, b) for n, b in model.named_buffers()]

    moment_entries: List[TensorEntry] = []
    optimizer_meta = None
    if optimizer is not None:
        group = optimizer.param_groups[0]
        step_count = 0
        for name, param in model.named_parameters():
            state = optimizer.state.get(param)
            if not state:
                continue
            step_count = int(state["step"])
            moment_entries.append(_write(directory, "moments", f"{name}.m", state["exp_avg"]))
            moment_entries.append(_write(directory, "moments", f"{name}.v", state["exp_avg_sq"]))
        optimizer_meta = OptimizerMeta(
            lr=group["lr"],
            betas=tuple(group["betas"]),
            eps=group["eps"],
            weight_decay=group["weight_decay"],
            step_count=step_count,
        )

    rng_entries = [_write(directory, "rng", name, g.get_state()) for name, g in (generators or {}).items()]

    manifest = manifest.model_copy(
        update={
            "parameters": param_entries,
            "buffers": buffer_entries,
            "moments": moment_entries,
            "rng": rng_entries,
            "optimizer": optimizer_meta,
        }
    )
    (directory / MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2) + "\n")
    logger.info(f"Saved checkpoint at epoch {manifest.epoch} to {directory}")
    return directory


def load_checkpoint(path: Path, expected_hash: Optional[str] = None) -> Checkpoint:
    """Read a checkpoint; a differing model hash means a different wiring and is refused."""
    directory = Path(path)
    try:
        manifest = CheckpointManifest.model_validate_json((directory / MANIFEST_FILE).read_text())
    except (OSError, ValidationError) as e:
        raise CheckpointError(f"corrupt or missing manifest in {directory}: {e}") from e

    if expected_hash is not None and manifest.model_hash != expected_hash:
        raise CheckpointError(
            f"config hash mismatch: checkpoint {manifest.model_hash}, configuration {expected_hash}"
        )

    return Checkpoint(
        manifest=manifest,
        parameters={e.name: _read(directory, e) for e in manifest.parameters},
        buffers={e.name: _read(directory, e) for e in manifest.buffers},
        moments={e.name: _read(directory, e) for e in manifest.moments},
        rng={e.name: _read(directory, e) for e in manifest.rng},
    )


def restore(
    checkpoint: Checkpoint,
    model: nn.Module,
    optimizer: Optional[torch.optim.Optimizer] = None,
    generators: Optional[Dict[str, torch.Generator]] = None,
) -> None:
    """Copy a loaded checkpoint into live objects, checking every shape."""
    state = {**checkpoint.parameters, **checkpoint.buffers}
    expected = model.state_dict()
    if set(state) != set(expected):
        missing, extra = sorted(set(expected) - set(state)), sorted(set(state) - set(expected))
        raise CheckpointError(f"parameter paths differ (missing {missing}, unexpected {extra})")
    for name, tensor in state.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise CheckpointError(f"shape mismatch for {name}: {tuple(tensor.shape)} vs {tuple(expected[name].shape)}")
    model.load_state_dict(state)

    if optimizer is not None and checkpoint.manifest.optimizer is not None:
        meta = checkpoint.manifest.optimizer
        optimizer_state = optimizer.state_dict()
        restored = {}
        for index, (name, _) in enumerate(model.named_parameters()):
            if f"{name}.m" in checkpoint.moments:
                restored[index] = {
                    "step": torch.tensor(float(meta.step_count)),
                    "exp_avg": checkpoint.moments[f"{name}.m"],
                    "exp_avg_sq": checkpoint.moments[f"{name}.v"],
                }
        optimizer_state["state"] = restored
        optimizer_state["param_groups"][0].update(
            lr=meta.lr, betas=tuple(meta.betas), eps=meta.eps, weight_decay=meta.weight_decay
        )
        optimizer.load_state_dict(optimizer_state)

    for name, generator in (generators or {}).items():
        if name not in checkpoint.rng:
            raise CheckpointError(f"checkpoint has no RNG state for {name}")
        generator.set_state(checkpoint.rng[name])


def load_model(path: Path, expected_hash: Optional[str] = None) -> Tuple[AuxVAE, CheckpointManifest]:
    """Rebuild the network a checkpoint describes and load its weights, in eval mode."""
    checkpoint = load_checkpoint(path, expected_hash)
    manifest = checkpoint.manifest
    model = AuxVAE(manifest.model, manifest.num_channels, manifest.num_styles, manifest.setting)
    if model.config_hash() != manifest.model_hash:
        raise CheckpointError(f"manifest hash {manifest.model_hash} does not describe its own wiring")
    restore(checkpoint, model)
    model.eval()
    return model, manifest
