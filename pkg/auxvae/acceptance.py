"""Desk-scale trend checks on a synthetic cohort: paired ablation, leakage and a determinism rerun."""

import hashlib
import logging
import time
from pathlib import Path
from statistics import mean
from typing import Dict, List, Optional

from pydantic import BaseModel

from auxvae.ablation import get_setting, run_ablation
from auxvae.config import RunConfig
from auxvae.synth import generate_dataset
from auxvae.training import LopoResult, metrics_frame, run_lopo
from auxvae.version import __version__

logger = logging.getLogger(__name__)

ACCEPTANCE_SETTINGS = ("setting_1", "setting_3", "setting_5")
FULL_SETTING = "setting_5"
MIN_RELATIVE_GAIN = 0.15
MIN_STYLE_ACCURACY = 0.90
RUNTIME_BUDGET_S = 30 * 60


class Criterion(BaseModel):
    name: str
    passed: bool
    detail: str


class AcceptanceReport(BaseModel):
    config_hash: str
    seed: int
    code_version: str = __version__
    mae: Dict[str, Optional[float]]
    style_accuracy: Dict[str, Optional[float]]
    mae_by_repeat: Dict[str, Dict[int, float]]
    criteria: List[Criterion]
    wall_time_s: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)


def mae_by_repeat(result: LopoResult) -> Dict[int, float]:
    """Fold-averaged MAE for each repeat; repeats share seeds across settings."""
    per_repeat: Dict[int, List[float]] = {}
    for r in result.results:
        per_repeat.setdefault(r.repeat, []).append(r.evaluation.mae_lbs)
    return {repeat: mean(values) for repeat, values in sorted(per_repeat.items())}


def tree_digest(root: Path) -> Dict[str, str]:
    """SHA-256 of every file below ``root``, keyed by relative path."""
    return {
        str(path.relative_to(root)): hashlib.sha256(path.read_bytes()).hexdigest()
        for path in sorted(root.rglob("*"))
        if path.is_file()
    }


def _trend_criteria(results: Dict[str, LopoResult]) -> List[Criterion]:
    full, plain, concat = (results[name] for name in (FULL_SETTING, "setting_1", "setting_3"))
    criteria = []
    failed = {name: len(r.failures) for name, r in results.items() if r.failures}
    criteria.append(Criterion(name="all jobs finished", passed=not failed, detail=f"failures per setting: {failed or 0}"))
    if full.mae is None or plain.mae is None or concat.mae is None:
        criteria.append(Criterion(name="trend checks", passed=False, detail="a setting produced no evaluations"))
        return criteria

    gain = (plain.mae.mean - full.mae.mean) / plain.mae.mean
    criteria.append(
        Criterion(
            name="full model beats no-baseline variant",
            passed=gain >= MIN_RELATIVE_GAIN,
            detail=f"MAE {full.mae.mean:.3f} vs {plain.mae.mean:.3f} ({gain:+.1%}, need >= {MIN_RELATIVE_GAIN:.0%})",
        )
    )

    full_repeats, concat_repeats = mae_by_repeat(full), mae_by_repeat(concat)
    paired = [r for r in full_repeats if r in concat_repeats]
    wins = sum(full_repeats[r] < concat_repeats[r] for r in paired)
    criteria.append(
        Criterion(
            name="cross-attention beats concatenation",
            passed=full.mae.mean < concat.mae.mean and 2 * wins > len(paired),
            detail=f"MAE {full.mae.mean:.3f} vs {concat.mae.mean:.3f}; lower on {wins} of {len(paired)} paired seeds",
        )
    )

    accuracy = None if full.style_accuracy is None else full.style_accuracy.mean
    criteria.append(
        Criterion(
            name="style accuracy",
            passed=accuracy is not None and accuracy >= MIN_STYLE_ACCURACY,
            detail=f"{accuracy if accuracy is None else round(accuracy, 4)} (need >= {MIN_STYLE_ACCURACY})",
        )
    )

    violations = sum(r.leakage_violations for result in results.values() for r in result.results)
    criteria.append(Criterion(name="no held-out leakage", passed=violations == 0, detail=f"{violations} violations"))
    return criteria


def run_acceptance(cfg: RunConfig, work_dir: Path, rerun: bool = True) -> AcceptanceReport:
    """Synthesize the cohort from ``cfg``, run the paired ablation and optionally repeat the full model.

    The repeat trains the full model again into a second checkpoint tree; its
    metrics and every checkpoint file must match the first run byte for byte.
    """
    started = time.perf_counter()
    work_dir = Path(work_dir)
    records = generate_dataset(cfg.synth, cfg.layout.to_layout(), seed=cfg.synth_seed())
    settings = [get_setting(name) for name in ACCEPTANCE_SETTINGS]
    logger.info(f"Acceptance run: {len(records)} participants, settings {', '.join(ACCEPTANCE_SETTINGS)}")
    table = run_ablation(records, cfg.synth.num_styles, cfg, settings, work_dir / "first")
    criteria = _trend_criteria(table.results)

    if rerun:
        logger.info(f"Acceptance run: repeating {FULL_SETTING} for the determinism check")
        again = run_lopo(records, cfg.synth.num_styles, cfg, get_setting(FULL_SETTING), work_dir / "second")
        same_metrics = metrics_frame(table.results[FULL_SETTING].results).equals(metrics_frame(again.results))
        first = tree_digest(work_dir / "first" / FULL_SETTING)
        second = tree_digest(work_dir / "second" / FULL_SETTING)
        differing = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
        criteria.append(
            Criterion(
                name="identical reruns",
                passed=same_metrics and bool(first) and not differing,
                detail=f"metrics equal: {same_metrics}; {len(first)} checkpoint files, {len(differing)} differ",
            )
        )

    elapsed = time.perf_counter() - started
    criteria.append(
        Criterion(name="runtime", passed=elapsed < RUNTIME_BUDGET_S, detail=f"{elapsed / 60:.1f} min (budget 30 min)")
    )
    return AcceptanceReport(
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        mae={name: None if r.mae is None else r.mae.mean for name, r in table.results.items()},
        style_accuracy={
            name: None if r.style_accuracy is None else r.style_accuracy.mean for name, r in table.results.items()
        },
        mae_by_repeat={name: mae_by_repeat(r) for name, r in table.results.items()},
        criteria=criteria,
        wall_time_s=elapsed,
    )
