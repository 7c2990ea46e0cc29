"""Synthetic cohorts: person-specific sinusoidal gait with load and style effects."""

import logging
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from auxvae.config import SynthConfig, derive_seed
from auxvae.errors import DataValidationError
from auxvae.models import CarryStyle, GaitWindow, ParticipantRecord, SensorLayout, TrialSample

logger = logging.getLogger(__name__)


class PersonTraits(BaseModel):
    """Individual kinematic characteristics of one synthetic walker."""

    model_config = ConfigDict(frozen=True)

    stride_freq_hz: float = Field(..., gt=0)
    amp_scale: List[float]
    phase_offset: List[float]
    noise_std: float = Field(0.0, ge=0)

    @field_validator("phase_offset")
    @classmethod
    def _check_phase(cls, value: List[float]) -> List[float]:
        if any(not 0 <= p < 2 * np.pi for p in value):
            raise ValueError("phase offsets must lie in [0, 2*pi)")
        return value


def draw_traits(cfg: SynthConfig, layout: SensorLayout, seed: int) -> PersonTraits:
    rng = np.random.default_rng(seed)
    return PersonTraits(
        stride_freq_hz=float(rng.uniform(*cfg.stride_freq_range)),
        amp_scale=rng.uniform(*cfg.amp_scale_range, size=layout.num_channels).tolist(),
        phase_offset=rng.uniform(0.0, 2 * np.pi, size=layout.num_channels).tolist(),
        noise_std=cfg.noise_std,
    )


def style_channels(num_channels: int, num_styles: int, style_index: int) -> np.ndarray:
    """Disjoint contiguous channel block owned by a style (quarters for four styles)."""
    return np.array_split(np.arange(num_channels), num_styles)[style_index]


def _render(
    freq_hz: float, amplitudes: np.ndarray, phases: np.ndarray, noise_std: float, layout: SensorLayout, length: int, seed: int
) -> GaitWindow:
    if length < 2:
        raise DataValidationError(f"window length must be at least 2, got {length}")
    t = np.arange(length, dtype=np.float64)[:, None]
    values = amplitudes[None, :] * np.sin(2 * np.pi * freq_hz * t / layout.sample_rate_hz + phases[None, :])
    noise = np.random.default_rng(seed).normal(0.0, 1.0, size=values.shape)
    return GaitWindow(values=values + noise_std * noise)


def generate_baseline(traits: PersonTraits, layout: SensorLayout, length: int, rng_seed: int) -> GaitWindow:
    return _render(
        traits.stride_freq_hz,
        np.asarray(traits.amp_scale),
        np.asarray(traits.phase_offset),
        traits.noise_std,
        layout,
        length,
        rng_seed,
    )


def generate_loaded(
    traits: PersonTraits,
    layout: SensorLayout,
    length: int,
    load_lbs: float,
    style: CarryStyle,
    cfg: SynthConfig,
    rng_seed: int,
) -> GaitWindow:
    """Load slows cadence and damps amplitude; style amplifies its own channel block."""
    if load_lbs < 0:
        raise DataValidationError(f"load must be nonnegative, got {load_lbs}")
    if style.num_styles != cfg.num_styles:
        raise DataValidationError(f"style index {style.index} of {style.num_styles} styles, config has {cfg.num_styles}")

    freq = traits.stride_freq_hz / (1.0 + cfg.cadence_slow_per_lb * load_lbs)
    amplitudes = np.asarray(traits.amp_scale) / (1.0 + cfg.amp_atten_per_lb * load_lbs)
    amplitudes[style_channels(layout.num_channels, cfg.num_styles, style.index)] *= 1.0 + cfg.style_asym_gain
    return _render(freq, amplitudes, np.asarray(traits.phase_offset), traits.noise_std, layout, length, rng_seed)


def generate_dataset(cfg: SynthConfig, layout: SensorLayout, seed: int = 0) -> List[ParticipantRecord]:
    """Full condition grid per participant; seed falls back to cfg.seed when that is set."""
    base_seed = cfg.seed if cfg.seed is not None else seed
    records = []
    for i in range(cfg.num_participants):
        pid = f"P{i + 1:02d}"
        traits = draw_traits(cfg, layout, derive_seed(base_seed, "traits", i))
        baseline = generate_baseline(traits, layout, cfg.seq_len, derive_seed(base_seed, "baseline", i))
        trials = []
        for style_index in range(cfg.num_styles):
            style = CarryStyle(index=style_index, num_styles=cfg.num_styles)
            for load in cfg.load_levels_lbs:
                for rep in range(cfg.trials_per_condition):
                    trial_id = f"{pid}-s{style_index}-l{load:g}-r{rep}"
                    window = generate_loaded(
                        traits, layout, cfg.seq_len, load, style, cfg, derive_seed(base_seed, "trial", trial_id)
                    )
                    trials.append(
                        TrialSample(
                            loaded_gait=window, load_lbs=load, style=style, participant_id=pid, trial_id=trial_id
                        )
                    )
        records.append(ParticipantRecord(participant_id=pid, baseline_gait=baseline, trials=trials))
    logger.info(f"Generated {len(records)} synthetic participants (seed {base_seed})")
    return records
