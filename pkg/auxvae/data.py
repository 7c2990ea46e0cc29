"""Dataset operations: resampling, normalization, LOPO splits and the on-disk format."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from auxvae.errors import DataValidationError, ShapeError
from auxvae.models import (
    CarryStyle,
    FoldSplit,
    GaitWindow,
    NormalizationStats,
    ParticipantRecord,
    SensorLayout,
    TrialSample,
    style_names,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STD_EPSILON = 1e-6
METADATA_FILE = "metadata.json"


def resample_to_length(window: Union[GaitWindow, np.ndarray], target_len: int) -> GaitWindow:
    """Linearly interpolate every channel onto target_len uniformly spaced positions."""
    if not isinstance(window, GaitWindow):
        window = GaitWindow.from_array(window)
    if window.time_steps < 2 or target_len < 2:
        raise DataValidationError(f"resampling needs at least 2 steps, got {window.time_steps} -> {target_len}")
    if window.time_steps == target_len:
        return window

    positions = np.linspace(0.0, window.time_steps - 1, target_len)
    grid = np.arange(window.time_steps, dtype=np.float64)
    columns = [np.interp(positions, grid, window.values[:, c]) for c in range(window.num_channels)]
    return GaitWindow(values=np.stack(columns, axis=1))


def _windows(records: Iterable[ParticipantRecord]) -> List[GaitWindow]:
    windows = []
    for record in records:
        windows.append(record.baseline_gait)
        windows.extend(trial.loaded_gait for trial in record.trials)
    return windows


def fit_normalization(train_records: Sequence[ParticipantRecord], epsilon: float = STD_EPSILON) -> NormalizationStats:
    """Pool every loaded and baseline window of the training participants."""
    if not any(record.trials for record in train_records):
        raise DataValidationError("normalization needs at least one trial")
    pooled = np.concatenate([w.values for w in _windows(train_records)], axis=0)
    std = np.maximum(pooled.std(axis=0), epsilon)
    return NormalizationStats(per_channel_mean=pooled.mean(axis=0).tolist(), per_channel_std=std.tolist())


def apply_normalization(window: GaitWindow, stats: NormalizationStats) -> GaitWindow:
    if window.num_channels != len(stats.per_channel_mean):
        raise ShapeError(f"window has {window.num_channels} channels, stats have {len(stats.per_channel_mean)}")
    return GaitWindow(values=(window.values - stats.mean) / stats.std)


def invert_normalization(window: GaitWindow, stats: NormalizationStats) -> GaitWindow:
    if window.num_channels != len(stats.per_channel_mean):
        raise ShapeError(f"window has {window.num_channels} channels, stats have {len(stats.per_channel_mean)}")
    return GaitWindow(values=window.values * stats.std + stats.mean)


def lopo_splits(dataset: Sequence[ParticipantRecord]) -> List[FoldSplit]:
    """One fold per participant, in dataset order."""
    ids = [record.participant_id for record in dataset]
    if len(ids) < 2:
        raise DataValidationError(f"leave-one-participant-out needs at least 2 participants, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise DataValidationError("participant ids are not unique")
    everyone = frozenset(ids)
    return [
        FoldSplit(held_out_participant=pid, train_ids=everyone - {pid}, test_ids=frozenset({pid})) for pid in ids
    ]


def select(dataset: Sequence[ParticipantRecord], ids: Iterable[str]) -> List[ParticipantRecord]:
    wanted = set(ids)
    return [record for record in dataset if record.participant_id in wanted]


@dataclass(frozen=True)
class TrialTensors:
    """Stacked, normalized trials ready for a network."""

    loaded: torch.Tensor  # (N, T, S)
    baseline: torch.Tensor  # (N, T_0, S), each trial paired with its participant's baseline
    load: torch.Tensor  # (N,)
    style: torch.Tensor  # (N,) int64
    participant_ids: Tuple[str, ...]
    trial_ids: Tuple[str, ...]

    def __len__(self) -> int:
        return int(self.load.shape[0])

    def subset(self, index: torch.Tensor) -> "TrialTensors":
        rows = index.tolist()
        return TrialTensors(
            loaded=self.loaded[index],
            baseline=self.baseline[index],
            load=self.load[index],
            style=self.style[index],
            participant_ids=tuple(self.participant_ids[i] for i in rows),
            trial_ids=tuple(self.trial_ids[i] for i in rows),
        )


def prepare_window(window: GaitWindow, length: int, stats: NormalizationStats) -> np.ndarray:
    return apply_normalization(resample_to_length(window, length), stats).values


def to_tensors(
    records: Sequence[ParticipantRecord],
    stats: NormalizationStats,
    seq_len: int,
    baseline_len: int,
    dtype: torch.dtype = torch.float32,
) -> TrialTensors:
    """Resample, normalize and stack every trial of the given participants."""
    loaded, baseline, load, style, pids, tids = [], [], [], [], [], []
    for record in records:
        base = prepare_window(record.baseline_gait, baseline_len, stats)
        for trial in record.trials:
            loaded.append(prepare_window(trial.loaded_gait, seq_len, stats))
            baseline.append(base)
            load.append(trial.load_lbs)
            style.append(trial.style.index)
            pids.append(trial.participant_id)
            tids.append(trial.trial_id)
    if not loaded:
        raise DataValidationError("no trials to stack")
    return TrialTensors(
        loaded=torch.as_tensor(np.stack(loaded), dtype=dtype),
        baseline=torch.as_tensor(np.stack(baseline), dtype=dtype),
        load=torch.as_tensor(load, dtype=dtype),
        style=torch.as_tensor(style, dtype=torch.int64),
        participant_ids=tuple(pids),
        trial_ids=tuple(tids),
    )


def write_matrix(path: Path, values: np.ndarray) -> None:
    """Little-endian float32, row-major (time x channel)."""
    path.write_bytes(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_matrix(path: Path, num_channels: int) -> np.ndarray:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if raw.size == 0 or raw.size % num_channels:
        raise DataValidationError(f"{path}: {raw.size} values do not form rows of {num_channels} channels")
    return raw.reshape(-1, num_channels).astype(np.float64)


def save_dataset(
    records: Sequence[ParticipantRecord],
    layout: SensorLayout,
    directory: Path,
    num_styles: int,
    provenance: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write the metadata document plus one matrix file per window."""
    directory = Path(directory)
    (directory / "windows").mkdir(parents=True, exist_ok=True)

    participants, trials = [], []
    for record in records:
        baseline_file = f"windows/{record.participant_id}_baseline.f32"
        write_matrix(directory / baseline_file, record.baseline_gait.values)
        participants.append({"participant_id": record.participant_id, "baseline_file": baseline_file})
        for trial in record.trials:
            trial_file = f"windows/{trial.trial_id}.f32"
            write_matrix(directory / trial_file, trial.loaded_gait.values)
            trials.append(
                {
                    "participant_id": trial.participant_id,
                    "trial_id": trial.trial_id,
                    "load_lbs": trial.load_lbs,
                    "style": trial.style.index,
                    "file": trial_file,
                }
            )

    metadata = {
        "schema_version": SCHEMA_VERSION,
        "num_styles": num_styles,
        "style_names": style_names(num_styles),
        "num_channels": layout.num_channels,
        "sample_rate_hz": layout.sample_rate_hz,
        "channel_names": layout.channel_names,
        "units": {"load": "lbs"},
        "participants": participants,
        "trials": trials,
        "provenance": provenance or {},
    }
    path = directory / METADATA_FILE
    path.write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")
    logger.info(f"Wrote {len(participants)} participants and {len(trials)} trials to {directory}")
    return path


def load_dataset(directory: Path) -> Tuple[SensorLayout, int, List[ParticipantRecord]]:
    """Read a dataset directory; returns (layout, num_styles, records)."""
    directory = Path(directory)
    try:
        metadata = json.loads((directory / METADATA_FILE).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataValidationError(f"cannot read {directory / METADATA_FILE}: {e}") from e

    if metadata.get("schema_version") != SCHEMA_VERSION:
        raise DataValidationError(f"unsupported schema version {metadata.get('schema_version')}")

    try:
        layout = SensorLayout(
            num_channels=metadata["num_channels"],
            sample_rate_hz=metadata["sample_rate_hz"],
            channel_names=metadata["channel_names"],
        )
        num_styles = int(metadata["num_styles"])
        by_participant: Dict[str, List[TrialSample]] = {p["participant_id"]: [] for p in metadata["participants"]}
        for entry in metadata["trials"]:
            if entry["participant_id"] not in by_participant:
                raise DataValidationError(f"trial {entry['trial_id']} names unknown participant")
            window = GaitWindow.from_array(read_matrix(directory / entry["file"], layout.num_channels))
            by_participant[entry["participant_id"]].append(
                TrialSample(
                    loaded_gait=window,
                    load_lbs=entry["load_lbs"],
                    style=CarryStyle(index=entry["style"], num_styles=num_styles),
                    participant_id=entry["participant_id"],
                    trial_id=entry["trial_id"],
                )
            )
        records = [
            ParticipantRecord(
                participant_id=p["participant_id"],
                baseline_gait=GaitWindow.from_array(read_matrix(directory / p["baseline_file"], layout.num_channels)),
                trials=by_participant[p["participant_id"]],
            )
            for p in metadata["participants"]
        ]
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, DataValidationError):
            raise
        raise DataValidationError(f"malformed dataset metadata: {e}") from e

    logger.info(f"Loaded {len(records)} participants from {directory}")
    return layout, num_styles, records
