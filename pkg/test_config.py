"""
Configuration tests - environment settings and the experiment document
"""
import json

import pytest
from pydantic import ValidationError

from config.config import (
    ExperimentConfig,
    LevelConfig,
    PoolConfig,
    RemovalConfig,
    Settings,
    StimConfig,
    default_experiment_config,
    format_validation_error,
    load_experiment_config,
)


def test_settings_normalizes_log_level():
    """Log level names are upper-cased"""
    assert Settings(LOG_LEVEL="debug").LOG_LEVEL == "DEBUG"


def test_settings_rejects_unknown_values():
    with pytest.raises(ValidationError):
        Settings(LOG_LEVEL="chatty")
    with pytest.raises(ValidationError):
        Settings(LOG_FORMAT="xml")
    with pytest.raises(ValidationError):
        Settings(JOBS=0)


def test_default_battery_levels():
    """Three levels with the nominal durations and starting amplitudes"""
    config = default_experiment_config()
    assert [lv.level for lv in config.levels] == [0.10, 0.25, 0.40]
    assert [lv.duration for lv in config.levels] == [300.0, 240.0, 180.0]
    assert config.level(0.40).lf_amplitude == pytest.approx(6.13)
    assert config.level(0.25).hf_amplitude == pytest.approx(0.49)
    assert all(tuple(lv.periods[0]) == (5.0, 15.0) for lv in config.levels)


def test_level_lookup_unknown():
    with pytest.raises(KeyError):
        default_experiment_config().level(0.5)


def test_level_periods_must_start_with_initial_window():
    with pytest.raises(ValidationError):
        LevelConfig(level=0.1, duration=30.0, lf_amplitude=1.0, hf_amplitude=1.0, periods=[(0.0, 10.0)])


def test_level_periods_must_fit_trial():
    with pytest.raises(ValidationError):
        LevelConfig(level=0.1, duration=20.0, lf_amplitude=1.0, hf_amplitude=1.0,
                    periods=[(5.0, 15.0), (15.0, 25.0)])


def test_stim_sample_rate_must_resolve_lf_phase():
    """Ten samples per 500 us phase need at least 20 kHz"""
    with pytest.raises(ValidationError):
        StimConfig(sample_rate=10_000.0)


def test_stim_sample_rate_must_match_carrier():
    with pytest.raises(ValidationError):
        StimConfig(sample_rate=105_000.0)


def test_dt_must_divide_sample_period():
    with pytest.raises(ValidationError):
        ExperimentConfig(pool=PoolConfig(dt=15e-6))


def test_replace_window_shorter_than_isi():
    with pytest.raises(ValidationError):
        ExperimentConfig(removal=RemovalConfig(lf_replace_window=0.04))


def test_unknown_fields_are_rejected():
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"seeds": 3})


def test_unsupported_schema_version():
    with pytest.raises(ValidationError):
        ExperimentConfig(schema_version=99)


def test_conditions_subset():
    assert ExperimentConfig(conditions=["LF"]).conditions == ["LF"]
    with pytest.raises(ValidationError):
        ExperimentConfig(conditions=["LF", "LF"])
    with pytest.raises(ValidationError):
        ExperimentConfig(conditions=["TENS"])


def test_config_hash_tracks_content():
    """Equal documents hash equally, any change alters the hash"""
    a = default_experiment_config()
    b = ExperimentConfig.model_validate(json.loads(a.canonical_json()))
    assert a.config_hash == b.config_hash
    assert ExperimentConfig(seed=8).config_hash != a.config_hash


def test_load_with_overrides(tmp_path):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps({"seed": 3, "conditions": ["HF", "LF"]}))
    config = load_experiment_config(str(path), seed=42)
    assert config.seed == 42
    assert config.conditions == ["HF", "LF"]
    assert load_experiment_config(str(path), seed=None).seed == 3


def test_format_validation_error_names_field():
    with pytest.raises(ValidationError) as info:
        ExperimentConfig.model_validate({"stim": {"lf_base_frequency": -1}})
    assert "stim" in format_validation_error(info.value)
