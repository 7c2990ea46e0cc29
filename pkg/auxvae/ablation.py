"""Registered ablation settings and the paired comparison across them."""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, Field

from auxvae.config import AblationSetting, EncoderConfig, Fusion, RunConfig
from auxvae.data import lopo_splits
from auxvae.model import AuxVAE
from auxvae.models import ParticipantRecord
from auxvae.training import LopoResult, job_seeds, run_lopo

logger = logging.getLogger(__name__)

SETTINGS: Dict[str, AblationSetting] = {
    s.name: s
    for s in (
        AblationSetting(name="setting_1", use_aux_input=False, fusion=Fusion.NONE, use_aux_output=False),
        AblationSetting(name="setting_2", use_aux_input=False, fusion=Fusion.NONE, use_aux_output=True),
        AblationSetting(name="setting_3", use_aux_input=True, fusion=Fusion.CONCAT, use_aux_output=True),
        AblationSetting(name="setting_4", use_aux_input=True, fusion=Fusion.CROSS_ATTENTION, use_aux_output=False),
        AblationSetting(name="setting_5", use_aux_input=True, fusion=Fusion.CROSS_ATTENTION, use_aux_output=True),
    )
}


def get_setting(name: str) -> AblationSetting:
    if name not in SETTINGS:
        raise ValueError(f"unknown ablation setting {name!r}; registered: {', '.join(SETTINGS)}")
    return SETTINGS[name]


def build_variant(
    setting: AblationSetting, model_cfg: EncoderConfig, num_channels: int, num_styles: int, seed: int = 0
) -> AuxVAE:
    """The network wiring a setting describes; concatenation requires T == T_0."""
    return AuxVAE(model_cfg, num_channels, num_styles, setting, seed=seed)


class AblationRow(BaseModel):
    setting: str
    use_aux_input: bool
    fusion: Fusion
    use_aux_output: bool
    mae_mean: Optional[float] = None
    mae_std: Optional[float] = None
    accuracy_mean: Optional[float] = None
    accuracy_std: Optional[float] = None
    relative_mae_change: Optional[float] = Field(None, description="(mae - mae of the first setting) / mae of the first")
    runs: int = 0
    failures: int = 0


class AblationTable(BaseModel):
    rows: List[AblationRow]
    seed_ledger: List[Dict[str, object]]
    results: Dict[str, LopoResult] = Field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(row.failures for row in self.rows)


def seed_ledger(records: Sequence[ParticipantRecord], cfg: RunConfig) -> List[Dict[str, object]]:
    """Every fold x repeat job with its derived seeds; shared by all settings."""
    splits = lopo_splits(records)
    if cfg.train.folds is not None:
        splits = splits[: cfg.train.folds]
    return [
        {"fold": split.held_out_participant, "repeat": repeat, **job_seeds(cfg.seed, split.held_out_participant, repeat)}
        for split in splits
        for repeat in range(cfg.train.repeats)
    ]


def run_ablation(
    records: Sequence[ParticipantRecord],
    num_styles: int,
    cfg: RunConfig,
    settings: Optional[Sequence[AblationSetting]] = None,
    checkpoint_dir: Optional[Path] = None,
) -> AblationTable:
    """Run every setting over the same folds, repeats and seeds."""
    chosen = list(settings) if settings is not None else [get_setting(name) for name in cfg.ablation]
    if not chosen:
        raise ValueError("no ablation settings selected")

    rows: List[AblationRow] = []
    results: Dict[str, LopoResult] = {}
    reference: Optional[float] = None
    for setting in chosen:
        logger.info(f"Ablation: running {setting.name}")
        result = run_lopo(records, num_styles, cfg, setting, checkpoint_dir)
        results[setting.name] = result
        row = AblationRow(
            setting=setting.name,
            use_aux_input=setting.use_aux_input,
            fusion=setting.fusion,
            use_aux_output=setting.use_aux_output,
            runs=len(result.results),
            failures=len(result.failures),
        )
        if result.mae is not None:
            row.mae_mean, row.mae_std = result.mae.mean, result.mae.std
            if reference is None and not rows:
                reference = result.mae.mean
            if reference:
                row.relative_mae_change = (result.mae.mean - reference) / reference
        if result.style_accuracy is not None:
            row.accuracy_mean, row.accuracy_std = result.style_accuracy.mean, result.style_accuracy.std
        rows.append(row)

    return AblationTable(rows=rows, seed_ledger=seed_ledger(records, cfg), results=results)


def table_frame(table: AblationTable, provenance: Optional[Dict[str, object]] = None) -> pd.DataFrame:
    return pd.DataFrame([{**row.model_dump(mode="json"), **(provenance or {})} for row in table.rows])
