import pytest
from pydantic import ValidationError

from auxvae.ablation import SETTINGS, build_variant, get_setting, run_ablation, seed_ledger, table_frame
from auxvae.config import FULL_MODEL, AblationSetting, Fusion
from auxvae.errors import ShapeError
from auxvae.model import AuxVAE
from auxvae.substrate import module_paths


def test_five_registered_settings():
    wiring = [(s.use_aux_input, s.fusion, s.use_aux_output) for s in SETTINGS.values()]
    assert wiring == [
        (False, Fusion.NONE, False),
        (False, Fusion.NONE, True),
        (True, Fusion.CONCAT, True),
        (True, Fusion.CROSS_ATTENTION, False),
        (True, Fusion.CROSS_ATTENTION, True),
    ]


def test_fusion_must_match_aux_input():
    with pytest.raises(ValidationError):
        AblationSetting(name="bad", use_aux_input=True, fusion=Fusion.NONE, use_aux_output=True)
    with pytest.raises(ValidationError):
        AblationSetting(name="bad", use_aux_input=False, fusion=Fusion.CONCAT, use_aux_output=True)


def test_unknown_setting():
    with pytest.raises(ValueError):
        get_setting("setting_9")


def test_setting_5_is_the_full_model(micro_cfg):
    variant = build_variant(SETTINGS["setting_5"], micro_cfg, 3, 2, seed=1)
    full = AuxVAE(micro_cfg, 3, 2, FULL_MODEL, seed=1)
    assert module_paths(variant) == module_paths(full)
    assert variant.config_hash() == full.config_hash()


def test_setting_1_has_no_classifier_or_attention(micro_cfg):
    variant = build_variant(SETTINGS["setting_1"], micro_cfg, 3, 2)
    assert module_paths(variant, "classifier") == []
    assert module_paths(variant, "encoder.attention") == []
    assert module_paths(variant, "decoder.context_tcn") == []


def test_concat_variant_reads_stacked_channels(micro_cfg):
    variant = build_variant(SETTINGS["setting_3"], micro_cfg, 3, 2)
    first_conv = dict(variant.named_parameters())["encoder.stacked_tcn.blocks.0.conv.weight"]
    assert first_conv.shape[-1] == 6


def test_concat_needs_equal_lengths(micro_cfg):
    uneven = micro_cfg.model_copy(update={"baseline_len": 20})
    with pytest.raises(ShapeError):
        build_variant(SETTINGS["setting_3"], uneven, 3, 2)


def test_ablation_table(records, run_cfg):
    cfg = run_cfg.model_copy(update={"train": run_cfg.train.model_copy(update={"folds": 2})})
    table = run_ablation(records, 2, cfg)
    assert [row.setting for row in table.rows] == ["setting_1", "setting_5"]
    first, last = table.rows
    assert first.relative_mae_change == 0.0
    assert last.relative_mae_change == pytest.approx((last.mae_mean - first.mae_mean) / first.mae_mean)
    assert first.accuracy_mean is None
    assert last.accuracy_mean is not None
    assert first.runs == last.runs == 2
    assert table.seed_ledger == seed_ledger(records, cfg)
    assert len(table.seed_ledger) == 2
    assert len(table_frame(table)) == 2


def test_settings_share_fold_seeds(records, run_cfg):
    cfg = run_cfg.model_copy(update={"train": run_cfg.train.model_copy(update={"folds": 1, "max_epochs": 1})})
    table = run_ablation(records, 2, cfg)
    plain, full = table.results["setting_1"].results[0], table.results["setting_5"].results[0]
    assert plain.held_out == full.held_out
    assert plain.train.normalization == full.train.normalization
