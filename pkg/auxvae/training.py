"""Per-fold training, leave-one-participant-out runs and their tabular logs."""

import logging
import time
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, Field

from auxvae.aggregator import MetricSummary, aggregate, run_jobs
from auxvae.checkpoint import CheckpointManifest, load_checkpoint, restore, save_checkpoint
from auxvae.config import FULL_MODEL, AblationSetting, RunConfig, TrainConfig, derive_seed
from auxvae.data import fit_normalization, lopo_splits, select, to_tensors
from auxvae.errors import LeakageError, NonFiniteError, TrainingAborted
from auxvae.inference import EvalReport, evaluate
from auxvae.model import AuxVAE
from auxvae.models import FoldSplit, NormalizationStats, ParticipantRecord
from auxvae.objective import beta_schedule, elbo_loss
from auxvae.substrate import adam_step, make_optimizer, new_generator

logger = logging.getLogger(__name__)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Stepped schedule: lr0 * decay ** (epoch // step)."""
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_step)


def job_seeds(seed: int, fold: str, repeat: int) -> Dict[str, int]:
    """The named streams of one fold x repeat job; identical across ablation settings."""
    return {name: derive_seed(seed, name, fold, repeat) for name in ("init", "shuffle", "latent", "eval")}


class LeakageAudit:
    """Records which participants reach normalization fitting and training batches."""

    def __init__(self, held_out: str):
        self.held_out = held_out
        self.seen: Dict[str, set] = {}

    def record(self, stage: str, participant_ids: Iterable[str]) -> None:
        self.seen.setdefault(stage, set()).update(participant_ids)

    @property
    def violations(self) -> int:
        return sum(self.held_out in ids for ids in self.seen.values())

    def check(self) -> None:
        if self.violations:
            stages = sorted(stage for stage, ids in self.seen.items() if self.held_out in ids)
            raise LeakageError(f"held-out participant {self.held_out} reached {', '.join(stages)}")


class EpochMetrics(BaseModel):
    epoch: int
    lr: float
    beta: float
    recon_mse: float
    style_ce: float
    load_mae: float
    kl: float
    total: float
    batches: int


class TrainReport(BaseModel):
    fold: str
    repeat: int
    seed: int
    setting: str
    epochs: List[EpochMetrics] = Field(default_factory=list)
    wall_time_s: float = 0.0
    checkpoint: Optional[str] = None
    normalization: NormalizationStats


@dataclass
class TrainedFold:
    report: TrainReport
    model: AuxVAE
    normalization: NormalizationStats


def _checkpoint_root(checkpoint_dir: Optional[Path], setting: AblationSetting, fold: str, repeat: int) -> Optional[Path]:
    if checkpoint_dir is None:
        return None
    return Path(checkpoint_dir) / setting.name / fold / f"repeat_{repeat}"


def train_fold(
    fold: FoldSplit,
    records: Sequence[ParticipantRecord],
    cfg: RunConfig,
    num_styles: int,
    setting: AblationSetting = FULL_MODEL,
    repeat: int = 0,
    audit: Optional[LeakageAudit] = None,
    resume_from: Optional[Path] = None,
    checkpoint_dir: Optional[Path] = None,
) -> TrainedFold:
    """Fit one freshly initialized model on the fold's training participants.

    Everything random derives from ``(cfg.seed, fold, repeat)``. A non-finite
    loss or gradient saves the last good state and raises ``TrainingAborted``.
    """
    fold_id = fold.held_out_participant
    seeds = job_seeds(cfg.seed, fold_id, repeat)
    train_records = select(records, fold.train_ids)
    if audit is not None:
        audit.record("normalization", [r.participant_id for r in train_records])
    normalization = fit_normalization(train_records)

    num_channels = train_records[0].baseline_gait.num_channels
    model = AuxVAE(cfg.model, num_channels, num_styles, setting, seed=seeds["init"])
    loads = [t.load_lbs for r in train_records for t in r.trials]
    if loads:
        model.regressor.set_target_scale(float(np.mean(loads)), float(np.std(loads)) or 1.0)
    optimizer = make_optimizer(model, cfg.train)
    generators = {"shuffle": new_generator(seeds["shuffle"]), "latent": new_generator(seeds["latent"])}

    history: List[EpochMetrics] = []
    start_epoch = 0
    if resume_from is not None:
        checkpoint = load_checkpoint(resume_from, expected_hash=model.config_hash())
        restore(checkpoint, model, optimizer, generators)
        start_epoch = checkpoint.manifest.epoch
        history = [EpochMetrics.model_validate(row) for row in checkpoint.manifest.history]
        if checkpoint.manifest.normalization is not None:
            normalization = checkpoint.manifest.normalization
        logger.info(f"Resuming fold {fold_id} repeat {repeat} at epoch {start_epoch}")

    train = to_tensors(train_records, normalization, cfg.model.seq_len, cfg.model.baseline_len)

    root = _checkpoint_root(checkpoint_dir, setting, fold_id, repeat)

    def snapshot(tag: str, epoch: int) -> Optional[Path]:
        if root is None:
            return None
        manifest = CheckpointManifest(
            model_hash=model.config_hash(),
            run_hash=cfg.config_hash(),
            seed=cfg.seed,
            fold=fold_id,
            repeat=repeat,
            epoch=epoch,
            model=cfg.model,
            setting=setting,
            num_channels=num_channels,
            num_styles=num_styles,
            normalization=normalization,
            inference=cfg.inference,
            history=[row.model_dump() for row in history],
        )
        return save_checkpoint(root / tag, model, optimizer, manifest, generators)

    tcfg = cfg.train
    started = time.perf_counter()
    logger.info(f"Training {setting.name} fold {fold_id} repeat {repeat} on {len(train)} trials")
    for epoch in range(start_epoch, tcfg.max_epochs):
        lr = lr_at(epoch, tcfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        beta = beta_schedule(epoch, tcfg.max_epochs, tcfg.warmup_frac)

        model.train()
        order = torch.randperm(len(train), generator=generators["shuffle"])
        sums = dict.fromkeys(("recon_mse", "style_ce", "load_mae", "kl", "total"), 0.0)
        batches = 0
        for first in range(0, len(train), tcfg.batch_size):
            batch = train.subset(order[first : first + tcfg.batch_size])
            if audit is not None:
                audit.record("batch", batch.participant_ids)
            optimizer.zero_grad()
            # train-mode forward passes overwrite batch-norm running stats
            buffers = {name: b.detach().clone() for name, b in model.named_buffers()}
            try:
                losses = elbo_loss(model, batch, beta, generators["latent"], cfg.objective)
                losses.total.backward()
                adam_step(model, optimizer)
            except NonFiniteError as e:
                with torch.no_grad():
                    for name, b in model.named_buffers():
                        b.copy_(buffers[name])
                saved = snapshot("last_good", epoch)
                where = e.term or e.path
                logger.error(f"Fold {fold_id} repeat {repeat} diverged at epoch {epoch}: {where}")
                raise TrainingAborted(
                    f"training diverged at epoch {epoch}",
                    checkpoint=None if saved is None else str(saved),
                    diagnostic=str(e),
                ) from e
            for key, value in losses.as_floats().items():
                if key in sums:
                    sums[key] += value * len(batch)
            batches += 1

        row = EpochMetrics(
            epoch=epoch, lr=lr, beta=beta, batches=batches, **{k: v / len(train) for k, v in sums.items()}
        )
        history.append(row)
        if epoch % tcfg.log_every == 0 or epoch == tcfg.max_epochs - 1:
            logger.info(
                f"{setting.name} {fold_id}/r{repeat} epoch {epoch}: total={row.total:.4f} "
                f"mae={row.load_mae:.3f} ce={row.style_ce:.4f} kl={row.kl:.3f} lr={lr:.1e} beta={beta:.3f}"
            )
        if tcfg.checkpoint_every and (epoch + 1) % tcfg.checkpoint_every == 0:
            snapshot(f"epoch_{epoch + 1:04d}", epoch + 1)

    final = snapshot("final", tcfg.max_epochs)
    report = TrainReport(
        fold=fold_id,
        repeat=repeat,
        seed=cfg.seed,
        setting=setting.name,
        epochs=history,
        wall_time_s=time.perf_counter() - started,
        checkpoint=None if final is None else str(final),
        normalization=normalization,
    )
    return TrainedFold(report=report, model=model, normalization=normalization)


class FoldResult(BaseModel):
    held_out: str
    repeat: int
    train: TrainReport
    evaluation: EvalReport
    leakage_violations: int = 0


class LopoResult(BaseModel):
    setting: AblationSetting
    results: List[FoldResult] = Field(default_factory=list)
    failures: Dict[str, str] = Field(default_factory=dict)
    mae: Optional[MetricSummary] = None
    style_accuracy: Optional[MetricSummary] = None

    @property
    def succeeded(self) -> bool:
        return not self.failures


def run_fold_job(
    split: FoldSplit,
    repeat: int,
    records: Sequence[ParticipantRecord],
    cfg: RunConfig,
    num_styles: int,
    setting: AblationSetting,
    checkpoint_dir: Optional[Path] = None,
) -> FoldResult:
    """Train on a split, then evaluate on its held-out participant."""
    audit = LeakageAudit(split.held_out_participant)
    trained = train_fold(split, records, cfg, num_styles, setting, repeat, audit=audit, checkpoint_dir=checkpoint_dir)
    audit.check()

    test_records = select(records, split.test_ids)
    test = to_tensors(test_records, trained.normalization, cfg.model.seq_len, cfg.model.baseline_len)
    seeds = job_seeds(cfg.seed, split.held_out_participant, repeat)
    evaluation = evaluate(trained.model, test, cfg.inference, new_generator(seeds["eval"]))
    logger.info(
        f"{setting.name} {split.held_out_participant}/r{repeat}: mae={evaluation.mae_lbs:.3f} "
        f"accuracy={evaluation.style_accuracy}"
    )
    return FoldResult(
        held_out=split.held_out_participant,
        repeat=repeat,
        train=trained.report,
        evaluation=evaluation,
        leakage_violations=audit.violations,
    )


def run_lopo(
    records: Sequence[ParticipantRecord],
    num_styles: int,
    cfg: RunConfig,
    setting: AblationSetting = FULL_MODEL,
    checkpoint_dir: Optional[Path] = None,
) -> LopoResult:
    """Every fold x repeat job, trained and evaluated, then aggregated with equal weights."""
    splits = lopo_splits(records)
    if cfg.train.folds is not None:
        splits = splits[: cfg.train.folds]

    jobs = [
        (
            f"{split.held_out_participant}/r{repeat}",
            partial(run_fold_job, split, repeat, records, cfg, num_styles, setting, checkpoint_dir),
        )
        for split in splits
        for repeat in range(cfg.train.repeats)
    ]
    outcomes = run_jobs(jobs, cfg.train.max_workers)

    results = [o.result for o in outcomes if o.ok and o.result is not None]
    failures = {o.key: o.error or "" for o in outcomes if not o.ok}
    result = LopoResult(setting=setting, results=results, failures=failures)
    if results:
        result.mae = aggregate([r.evaluation.mae_lbs for r in results])
        accuracies = [r.evaluation.style_accuracy for r in results if r.evaluation.style_accuracy is not None]
        if accuracies:
            result.style_accuracy = aggregate(accuracies)
    if failures:
        logger.warning(f"{setting.name}: {len(failures)} of {len(jobs)} jobs failed")
    return result


def metrics_frame(results: Iterable[FoldResult], provenance: Optional[Dict[str, object]] = None) -> pd.DataFrame:
    """One row per fold x repeat x epoch."""
    rows = [
        {"setting": r.train.setting, "fold": r.held_out, "repeat": r.repeat, **row.model_dump(), **(provenance or {})}
        for r in results
        for row in r.train.epochs
    ]
    return pd.DataFrame(rows)
