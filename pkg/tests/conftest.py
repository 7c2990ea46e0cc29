import pytest
import torch

from auxvae.config import EncoderConfig, PathsConfig, RunConfig, SynthConfig, LayoutConfig, TrainConfig
from auxvae.data import fit_normalization, to_tensors
from auxvae.models import SensorLayout
from auxvae.synth import generate_dataset

MICRO_CHANNELS = 3
MICRO_STYLES = 2


@pytest.fixture
def micro_cfg() -> EncoderConfig:
    return EncoderConfig(
        seq_len=16,
        baseline_len=16,
        tcn_channels=[8, 8],
        attn_dim=8,
        num_heads=2,
        d_k=4,
        d_v=4,
        latent_dim=4,
        head_hidden=8,
    )


@pytest.fixture
def layout() -> SensorLayout:
    return SensorLayout.default(MICRO_CHANNELS, 80.0)


@pytest.fixture
def synth_cfg() -> SynthConfig:
    return SynthConfig(num_participants=3, load_levels_lbs=[10.0, 30.0], num_styles=MICRO_STYLES, seq_len=24)


@pytest.fixture
def records(synth_cfg, layout):
    return generate_dataset(synth_cfg, layout, seed=7)


@pytest.fixture
def run_cfg(micro_cfg, synth_cfg, tmp_path) -> RunConfig:
    return RunConfig(
        seed=3,
        layout=LayoutConfig(num_channels=MICRO_CHANNELS),
        synth=synth_cfg,
        model=micro_cfg,
        train=TrainConfig(batch_size=4, max_epochs=3, repeats=1, log_every=1),
        ablation=["setting_1", "setting_5"],
        paths=PathsConfig(data_dir=tmp_path / "data", output_dir=tmp_path / "runs"),
    )


@pytest.fixture
def tensors(records, micro_cfg):
    stats = fit_normalization(records)
    return to_tensors(records, stats, micro_cfg.seq_len, micro_cfg.baseline_len, dtype=torch.float64)
