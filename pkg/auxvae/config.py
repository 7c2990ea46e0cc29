"""Run configuration documents, hashing and seed derivation."""

import hashlib
import json
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, model_validator

from auxvae.models import SensorLayout

load_dotenv()

OUTPUT_DIR_ENV = "AUXVAE_OUTPUT_DIR"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LayoutConfig(_Section):
    num_channels: int = Field(72, gt=0, description="Sensor channels (12 sensors x 6 attributes)")
    sample_rate_hz: float = Field(80.0, gt=0, description="Sampling frequency")

    def to_layout(self) -> SensorLayout:
        return SensorLayout.default(self.num_channels, self.sample_rate_hz)


class SynthConfig(_Section):
    """Synthetic cohort: condition grid, effect sizes and trait ranges."""

    num_participants: int = Field(22, gt=0)
    trials_per_condition: int = Field(1, gt=0)
    load_levels_lbs: List[float] = Field(default_factory=lambda: [10.0, 20.0, 30.0, 50.0])
    num_styles: int = Field(4, gt=0)
    cadence_slow_per_lb: float = Field(0.002, ge=0)
    amp_atten_per_lb: float = Field(0.004, ge=0)
    style_asym_gain: float = Field(0.3, ge=0)
    noise_std: float = Field(0.05, ge=0)
    seq_len: int = Field(800, ge=2, description="Recorded length of every synthetic window")
    stride_freq_range: Tuple[float, float] = (0.7, 1.2)
    amp_scale_range: Tuple[float, float] = (0.5, 1.5)
    seed: Optional[int] = Field(None, description="Dataset seed; derived from the global seed when unset")

    @model_validator(mode="after")
    def _check(self) -> "SynthConfig":
        loads = self.load_levels_lbs
        if not loads:
            raise ValueError("load_levels_lbs must not be empty")
        if any(b <= a for a, b in zip(loads, loads[1:])):
            raise ValueError("load_levels_lbs must be strictly ascending")
        if loads[0] < 0:
            raise ValueError("loads must be nonnegative")
        for name in ("stride_freq_range", "amp_scale_range"):
            low, high = getattr(self, name)
            if not 0 < low <= high:
                raise ValueError(f"{name} must satisfy 0 < low <= high")
        return self


class EncoderConfig(_Section):
    """Network widths for the encoder; the decoder mirrors them."""

    seq_len: int = Field(800, ge=2, description="Fixed loaded-gait length T")
    baseline_len: int = Field(800, ge=2, description="Fixed baseline-gait length T_0")
    tcn_channels: List[int] = Field(default_factory=lambda: [256, 128], min_length=1)
    kernel_size: int = Field(3, ge=1)
    pool_window: int = Field(2, ge=1)
    attn_dim: int = Field(64, gt=0, description="Projection width d_h")
    num_heads: int = Field(4, gt=0)
    d_k: int = Field(16, gt=0)
    d_v: int = Field(16, gt=0)
    latent_dim: int = Field(128, gt=0)
    head_hidden: int = Field(64, gt=0, description="Hidden width of classifier and regressor heads")
    log_sigma_clamp: float = Field(7.0, gt=0)
    attn_residual: bool = Field(
        False, description="Add each stream's own features to its attended output; needs attn_dim == num_heads * d_v"
    )

    @property
    def dilations(self) -> List[int]:
        return [2**u for u in range(len(self.tcn_channels))]

    @property
    def downsample(self) -> int:
        return self.pool_window ** len(self.tcn_channels)

    @model_validator(mode="after")
    def _check(self) -> "EncoderConfig":
        if self.seq_len % self.downsample:
            raise ValueError(f"seq_len {self.seq_len} not divisible by total pooling {self.downsample}")
        if self.attn_residual and self.attn_dim != self.num_heads * self.d_v:
            raise ValueError(f"attn_residual needs attn_dim {self.attn_dim} == num_heads * d_v {self.num_heads * self.d_v}")
        return self


class ObjectiveConfig(_Section):
    recon_weight: float = Field(1.0, ge=0)
    style_weight: float = Field(1.0, ge=0)
    load_weight: float = Field(1.0, ge=0)
    train_latent_samples: int = Field(1, ge=1)


class TrainConfig(_Section):
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(128, gt=0)
    max_epochs: int = Field(500, gt=0)
    lr_decay: float = Field(0.1, gt=0)
    lr_step: int = Field(100, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    repeats: int = Field(10, gt=0)
    warmup_frac: float = Field(0.5, gt=0, le=1)
    checkpoint_every: int = Field(0, ge=0, description="Also checkpoint every N epochs; 0 keeps only the final one")
    log_every: int = Field(10, gt=0)
    max_workers: int = Field(1, gt=0, description="Concurrent fold jobs")
    folds: Optional[int] = Field(None, gt=0, description="Restrict to the first N LOPO folds")


class InferenceConfig(_Section):
    num_latent_samples: int = Field(16, ge=1)
    deterministic_latent: bool = False
    dump_attention: bool = False


class Fusion(str, Enum):
    NONE = "none"
    CONCAT = "concat"
    CROSS_ATTENTION = "cross_attention"


class AblationSetting(_Section):
    """Which auxiliary pathways a model variant uses."""

    name: str
    use_aux_input: bool
    fusion: Fusion
    use_aux_output: bool

    @model_validator(mode="after")
    def _check(self) -> "AblationSetting":
        if (self.fusion == Fusion.NONE) == self.use_aux_input:
            raise ValueError("fusion must be 'none' exactly when the auxiliary input is unused")
        return self


FULL_MODEL = AblationSetting(name="auxvae", use_aux_input=True, fusion=Fusion.CROSS_ATTENTION, use_aux_output=True)


class PathsConfig(_Section):
    data_dir: Path = Path("data")
    output_dir: Path = Path("runs")
    checkpoint_dir: Optional[Path] = None

    @property
    def checkpoints(self) -> Path:
        return self.checkpoint_dir or self.output_dir / "checkpoints"


class RunConfig(_Section):
    """One experiment: every section plus the global seed."""

    seed: int = 0
    layout: LayoutConfig = LayoutConfig()
    synth: SynthConfig = SynthConfig()
    model: EncoderConfig = EncoderConfig()
    objective: ObjectiveConfig = ObjectiveConfig()
    train: TrainConfig = TrainConfig()
    inference: InferenceConfig = InferenceConfig()
    ablation: List[str] = Field(
        default_factory=lambda: ["setting_1", "setting_2", "setting_3", "setting_4", "setting_5"],
        description="Registered ablation setting names",
    )
    paths: PathsConfig = PathsConfig()

    def config_hash(self) -> str:
        """Fingerprint of everything except file locations."""
        return _digest(self.model_dump(mode="json", exclude={"paths"}))

    def synth_seed(self) -> int:
        return self.synth.seed if self.synth.seed is not None else derive_seed(self.seed, "synth")

    def with_overrides(
        self,
        data_dir: Optional[Path] = None,
        output_dir: Optional[Path] = None,
        seed: Optional[int] = None,
        folds: Optional[int] = None,
        epochs: Optional[int] = None,
    ) -> "RunConfig":
        """Apply command-line overrides; the environment may only move the output directory."""
        paths_update: Dict[str, Any] = {}
        if data_dir is not None:
            paths_update["data_dir"] = Path(data_dir)
        env_output = os.getenv(OUTPUT_DIR_ENV)
        if output_dir is not None:
            paths_update["output_dir"] = Path(output_dir)
        elif env_output:
            paths_update["output_dir"] = Path(env_output)

        train_update: Dict[str, Any] = {}
        if folds is not None:
            train_update["folds"] = folds
        if epochs is not None:
            train_update["max_epochs"] = epochs

        data = self.model_dump()
        data["paths"].update(paths_update)
        data["train"].update(train_update)
        if seed is not None:
            data["seed"] = seed
        return RunConfig.model_validate(data)


def _digest(payload: object) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def model_hash(model_cfg: EncoderConfig, setting: AblationSetting, num_channels: int, num_styles: int) -> str:
    """Fingerprint of a network wiring; checkpoints refuse to load under a different one."""
    return _digest(
        {
            "model": model_cfg.model_dump(mode="json"),
            "setting": setting.model_dump(mode="json", exclude={"name"}),
            "num_channels": num_channels,
            "num_styles": num_styles,
        }
    )


def derive_seed(seed: int, *names: object) -> int:
    """Derive an independent 63-bit seed from the global seed and a component path."""
    key = "/".join([str(seed), *map(str, names)])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little") >> 1


def load_config(path: Optional[Path]) -> RunConfig:
    """Read and validate a config document; no path gives the defaults."""
    if path is None:
        return RunConfig()
    return RunConfig.model_validate_json(Path(path).read_text())
