"""Pydantic models for gait datasets."""

from typing import Any, FrozenSet, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from auxvae.errors import DataValidationError

CANONICAL_STYLES = ["one_handed_right", "one_handed_left", "two_handed_side", "two_handed_anterior"]

SENSOR_SITES = [
    "thigh_left",
    "thigh_right",
    "shank_left",
    "shank_right",
    "foot_right",
    "upper_arm_left",
    "upper_arm_right",
    "forearm_left",
    "forearm_right",
    "t6",
    "sternum",
    "l5_s1",
]
MOTION_ATTRIBUTES = ["acc_x", "acc_y", "acc_z", "gyr_x", "gyr_y", "gyr_z"]


def style_names(num_styles: int) -> List[str]:
    """Canonical style names; the four study styles first, generic names beyond."""
    if num_styles <= len(CANONICAL_STYLES):
        return CANONICAL_STYLES[:num_styles]
    return CANONICAL_STYLES + [f"style_{i}" for i in range(len(CANONICAL_STYLES), num_styles)]


class SensorLayout(BaseModel):
    """Channel layout shared by every window of a dataset."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    num_channels: int = Field(72, gt=0, description="Number of sensor channels S")
    sample_rate_hz: float = Field(80.0, gt=0, description="Sampling frequency in Hz")
    channel_names: List[str] = Field(default_factory=list, description="One name per channel")

    @model_validator(mode="after")
    def _check_names(self) -> "SensorLayout":
        if len(self.channel_names) != self.num_channels:
            raise ValueError(f"{len(self.channel_names)} channel names for {self.num_channels} channels")
        return self

    @classmethod
    def default(cls, num_channels: int = 72, sample_rate_hz: float = 80.0) -> "SensorLayout":
        """Anatomical names (site x attribute) when the count allows, generic names otherwise."""
        if num_channels % len(MOTION_ATTRIBUTES) == 0 and num_channels <= len(SENSOR_SITES) * len(MOTION_ATTRIBUTES):
            sites = SENSOR_SITES[: num_channels // len(MOTION_ATTRIBUTES)]
            names = [f"{site}_{attr}" for site in sites for attr in MOTION_ATTRIBUTES]
        else:
            names = [f"ch{i:02d}" for i in range(num_channels)]
        return cls(num_channels=num_channels, sample_rate_hz=sample_rate_hz, channel_names=names)


class GaitWindow(BaseModel):
    """A (time_steps x num_channels) gait matrix."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray = Field(..., description="Real matrix, rows are time steps")

    @field_validator("values", mode="before")
    @classmethod
    def _as_matrix(cls, value: Any) -> np.ndarray:
        array = np.array(value, dtype=np.float64)
        if array.ndim == 1:
            array = array[:, None]
        if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
            raise ValueError(f"gait window must be a non-empty matrix, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("gait window contains non-finite entries")
        array.flags.writeable = False
        return array

    @classmethod
    def from_array(cls, values: Any) -> "GaitWindow":
        """Build a window, reporting bad input as DataValidationError."""
        try:
            return cls(values=values)
        except ValidationError as e:
            raise DataValidationError(str(e)) from e

    @property
    def time_steps(self) -> int:
        return int(self.values.shape[0])

    @property
    def num_channels(self) -> int:
        return int(self.values.shape[1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GaitWindow):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))


class CarryStyle(BaseModel):
    """Carrying style label as an index into the canonical style order."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    index: int = Field(..., ge=0, description="Style index in [0, num_styles)")
    num_styles: int = Field(4, gt=0, description="Number of styles L")

    @model_validator(mode="after")
    def _check_index(self) -> "CarryStyle":
        if self.index >= self.num_styles:
            raise ValueError(f"style index {self.index} outside [0, {self.num_styles})")
        return self

    @property
    def one_hot(self) -> np.ndarray:
        vector = np.zeros(self.num_styles, dtype=np.float64)
        vector[self.index] = 1.0
        return vector

    @property
    def name(self) -> str:
        return style_names(self.num_styles)[self.index]

    @classmethod
    def from_one_hot(cls, vector: Any) -> "CarryStyle":
        array = np.asarray(vector)
        if array.ndim != 1 or np.count_nonzero(array) != 1 or array.max() != 1:
            raise DataValidationError(f"not a one-hot vector: {array.tolist()}")
        return cls(index=int(np.argmax(array)), num_styles=int(array.shape[0]))


class TrialSample(BaseModel):
    """One loaded walk."""

    model_config = ConfigDict(frozen=True)

    loaded_gait: GaitWindow
    load_lbs: float = Field(..., ge=0, description="Carried load y in pounds")
    style: CarryStyle
    participant_id: str
    trial_id: str


class ParticipantRecord(BaseModel):
    """One participant's unloaded baseline plus all of their loaded trials."""

    model_config = ConfigDict(frozen=True)

    participant_id: str
    baseline_gait: GaitWindow
    trials: List[TrialSample] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_trials(self) -> "ParticipantRecord":
        for trial in self.trials:
            if trial.participant_id != self.participant_id:
                raise ValueError(f"trial {trial.trial_id} belongs to {trial.participant_id}, not {self.participant_id}")
            if trial.loaded_gait.num_channels != self.baseline_gait.num_channels:
                raise ValueError(f"trial {trial.trial_id} channel count differs from the baseline")
        return self


class NormalizationStats(BaseModel):
    """Per-channel statistics fit on a training fold."""

    model_config = ConfigDict(frozen=True)

    per_channel_mean: List[float]
    per_channel_std: List[float]

    @model_validator(mode="after")
    def _check(self) -> "NormalizationStats":
        if len(self.per_channel_mean) != len(self.per_channel_std):
            raise ValueError("mean and std lengths differ")
        if any(s <= 0 for s in self.per_channel_std):
            raise ValueError("std entries must be positive")
        return self

    @property
    def mean(self) -> np.ndarray:
        return np.asarray(self.per_channel_mean, dtype=np.float64)

    @property
    def std(self) -> np.ndarray:
        return np.asarray(self.per_channel_std, dtype=np.float64)


class FoldSplit(BaseModel):
    """A leave-one-participant-out fold."""

    model_config = ConfigDict(frozen=True)

    held_out_participant: str
    train_ids: FrozenSet[str]
    test_ids: FrozenSet[str]

    @model_validator(mode="after")
    def _check_disjoint(self) -> "FoldSplit":
        if self.train_ids & self.test_ids:
            raise ValueError(f"train and test overlap: {sorted(self.train_ids & self.test_ids)}")
        if self.test_ids != frozenset({self.held_out_participant}):
            raise ValueError("test set must hold exactly the held-out participant")
        return self


class TrialPrediction(BaseModel):
    """One row of an evaluation: prediction against the labels."""

    participant_id: str
    trial_id: str
    true_load: float
    predicted_load: float
    true_style: int
    predicted_style: Optional[int] = None
    style_probs: Optional[List[float]] = None
