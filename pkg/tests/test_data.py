import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from auxvae.data import (
    apply_normalization,
    fit_normalization,
    invert_normalization,
    load_dataset,
    lopo_splits,
    resample_to_length,
    save_dataset,
    select,
    to_tensors,
)
from auxvae.errors import DataValidationError, ShapeError
from auxvae.models import CarryStyle, GaitWindow, NormalizationStats, ParticipantRecord, TrialSample


def test_resample_identity():
    window = GaitWindow.from_array(np.random.default_rng(0).normal(size=(10, 2)))
    assert resample_to_length(window, 10) == window


def test_resample_linear_ramp_stays_linear():
    ramp = np.linspace(0.0, 1.0, 5)[:, None]
    out = resample_to_length(ramp, 9)
    np.testing.assert_allclose(out.values[:, 0], np.linspace(0.0, 1.0, 9), atol=1e-12)


def test_resample_needs_two_steps():
    with pytest.raises(DataValidationError):
        resample_to_length(np.ones((1, 3)), 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40))
def test_resample_keeps_endpoints(source_len, target_len):
    values = np.random.default_rng(source_len).normal(size=(source_len, 2))
    out = resample_to_length(values, target_len).values
    assert out.shape == (target_len, 2)
    np.testing.assert_allclose(out[0], values[0])
    np.testing.assert_allclose(out[-1], values[-1])


def test_normalization_round_trip(records):
    stats = fit_normalization(records)
    window = records[0].trials[0].loaded_gait
    restored = invert_normalization(apply_normalization(window, stats), stats)
    np.testing.assert_allclose(restored.values, window.values, atol=1e-10)


def test_normalized_training_data_has_zero_mean_unit_std(records):
    stats = fit_normalization(records)
    pooled = np.concatenate(
        [apply_normalization(w, stats).values for r in records for w in [r.baseline_gait, *(t.loaded_gait for t in r.trials)]]
    )
    np.testing.assert_allclose(pooled.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(pooled.std(axis=0), 1.0, atol=1e-9)


def test_constant_channel_gets_floored_std():
    flat = GaitWindow.from_array(np.ones((6, 2)))
    record = ParticipantRecord(
        participant_id="P01",
        baseline_gait=flat,
        trials=[TrialSample(loaded_gait=flat, load_lbs=10.0, style=CarryStyle(index=0), participant_id="P01", trial_id="t")],
    )
    stats = fit_normalization([record])
    assert min(stats.per_channel_std) > 0
    np.testing.assert_allclose(apply_normalization(flat, stats).values, 0.0)


def test_normalization_channel_mismatch():
    stats = NormalizationStats(per_channel_mean=[0.0], per_channel_std=[1.0])
    with pytest.raises(ShapeError):
        apply_normalization(GaitWindow.from_array(np.zeros((4, 2))), stats)


def test_lopo_splits_hold_out_each_participant_once(records):
    splits = lopo_splits(records)
    assert [s.held_out_participant for s in splits] == ["P01", "P02", "P03"]
    for split in splits:
        assert split.held_out_participant not in split.train_ids
        assert len(split.train_ids) == 2


def test_lopo_needs_two_participants(records):
    with pytest.raises(DataValidationError):
        lopo_splits(records[:1])


def test_to_tensors_pairs_each_trial_with_its_baseline(records, micro_cfg):
    stats = fit_normalization(records)
    tensors = to_tensors(select(records, ["P02"]), stats, micro_cfg.seq_len, micro_cfg.baseline_len)
    assert tensors.loaded.shape == (4, 16, 3)
    assert tensors.baseline.shape == (4, 16, 3)
    assert set(tensors.participant_ids) == {"P02"}
    assert (tensors.baseline[0] == tensors.baseline[3]).all()


def test_dataset_round_trip(records, layout, tmp_path):
    save_dataset(records, layout, tmp_path, num_styles=2, provenance={"seed": 7})
    loaded_layout, num_styles, loaded = load_dataset(tmp_path)
    assert loaded_layout == layout
    assert num_styles == 2
    assert [r.participant_id for r in loaded] == [r.participant_id for r in records]
    original = records[1].trials[2]
    restored = loaded[1].trials[2]
    assert restored.trial_id == original.trial_id
    assert restored.style == original.style
    np.testing.assert_allclose(restored.loaded_gait.values, original.loaded_gait.values.astype(np.float32))


def test_load_dataset_rejects_missing_metadata(tmp_path):
    with pytest.raises(DataValidationError):
        load_dataset(tmp_path)


def test_resample_squares_onto_seven_steps():
    out = resample_to_length(np.array([[0.0], [1.0], [4.0], [9.0]]), 7)
    np.testing.assert_allclose(out.values[:, 0], [0.0, 0.5, 1.0, 2.5, 4.0, 6.5, 9.0], atol=1e-12)


def _single_channel_record(baseline, loaded):
    return ParticipantRecord(
        participant_id="P01",
        baseline_gait=GaitWindow.from_array(np.array(baseline, dtype=np.float64)[:, None]),
        trials=[
            TrialSample(
                loaded_gait=GaitWindow.from_array(np.array(loaded, dtype=np.float64)[:, None]),
                load_lbs=10.0,
                style=CarryStyle(index=0),
                participant_id="P01",
                trial_id="t",
            )
        ],
    )


@pytest.mark.parametrize("baseline, loaded", [([1.0, 3.0], [1.0, 3.0]), ([0.0], [2.0])])
def test_normalization_by_hand(baseline, loaded):
    stats = fit_normalization([_single_channel_record(baseline, loaded)])
    assert stats.per_channel_mean == pytest.approx([2.0 if len(baseline) == 2 else 1.0])
    assert stats.per_channel_std == pytest.approx([1.0])


def test_empty_training_fold_is_rejected(records):
    empty = [r.model_copy(update={"trials": []}) for r in records[:2]]
    with pytest.raises(DataValidationError, match="at least one trial"):
        fit_normalization(empty)
    with pytest.raises(DataValidationError, match="no trials"):
        to_tensors(empty, fit_normalization(records), 16, 16)
