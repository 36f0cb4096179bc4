"""
Stimulation protocol tests - LF and HF train synthesis
"""
import json

import numpy as np
import pandas as pd
import pytest

from app.errors import ParameterError
from app.models.stimulation import HfParams, LfParams, StimProtocol
from app.services.stim_protocol import (
    default_amplitude,
    export_stim_excerpt,
    measure_duty_cycle,
    onset_times,
    params_from_config,
    synthesize,
    synthesize_hf,
    synthesize_lf,
    train_period_samples,
    verify_charge_balance,
)
from config.config import default_experiment_config

FS = 100_000.0


def test_lf_one_second_has_thirty_pulses():
    train = synthesize_lf(LfParams(amplitude=5.0), 1.0, FS)
    assert len(train.onsets) == 30
    assert np.count_nonzero(train.samples > 0) == 30 * 50
    assert np.count_nonzero(train.samples < 0) == 30 * 50
    assert train.samples.max() == 5.0


def test_lf_pulse_is_positive_then_negative():
    train = synthesize_lf(LfParams(amplitude=2.0), 0.1, FS)
    onset = int(train.onsets[1])
    assert np.all(train.samples[onset:onset + 50] == 2.0)
    assert np.all(train.samples[onset + 50:onset + 100] == -2.0)
    assert train.samples[onset + 100] == 0.0


def test_lf_onsets_are_rounded_multiples_of_the_period():
    train = synthesize_lf(LfParams(amplitude=1.0), 1.0, FS)
    expected = np.round(np.arange(30) * FS / 30.0).astype(np.int64)
    np.testing.assert_array_equal(train.onsets, expected)


def test_lf_undersampled_phase_rejected():
    with pytest.raises(ParameterError):
        synthesize_lf(LfParams(amplitude=1.0), 1.0, 10_000.0)


def test_lf_pulse_must_fit_period():
    with pytest.raises(ParameterError):
        LfParams(amplitude=1.0, base_frequency=30.0, pulse_width=0.02)


def test_negative_amplitude_rejected():
    with pytest.raises(ParameterError):
        LfParams(amplitude=-1.0)
    with pytest.raises(ParameterError):
        HfParams(amplitude=-1.0)


def test_zero_amplitude_gives_silent_train():
    train = synthesize(HfParams(amplitude=0.0), 0.2, FS)
    assert not np.any(train.samples)


def test_hf_burst_holds_332_pulses():
    """A 30 Hz burst period fits 333 carrier periods, so 166 per polarity"""
    params = HfParams(amplitude=3.0)
    assert params.pulses_per_half_burst == 166
    train = synthesize_hf(params, 1.0 / 30.0, FS)
    assert len(train.onsets) == 1
    burst = train.samples
    rising = np.flatnonzero(np.diff(np.concatenate([[0.0], np.abs(burst)])) > 0)
    assert rising.size == 332
    assert np.count_nonzero(burst > 0) == 166 * 8
    assert np.count_nonzero(burst < 0) == 166 * 8


def test_hf_duty_cycle():
    train = synthesize_hf(HfParams(amplitude=3.0), 1.0, FS)
    assert len(train.onsets) == 30
    assert 0.79 <= measure_duty_cycle(train) <= 0.80


def test_hf_carrier_must_be_sampled_exactly():
    with pytest.raises(ParameterError):
        synthesize_hf(HfParams(amplitude=1.0), 1.0, 15_000.0)


@pytest.mark.parametrize("params", [LfParams(amplitude=4.0), HfParams(amplitude=4.0)])
def test_trains_are_charge_balanced(params):
    balance = verify_charge_balance(synthesize(params, 2.0, FS))
    assert not balance.imbalanced
    assert balance.net_charge == pytest.approx(0.0, abs=1e-12)
    assert balance.total_charge > 0


def test_truncated_train_drops_partial_period():
    """Only periods whose whole pulse fits are emitted"""
    duration = (np.round(29 * FS / 30.0) + 60) / FS
    train = synthesize_lf(LfParams(amplitude=1.0), duration, FS)
    assert len(train.onsets) == 29
    assert not verify_charge_balance(train).imbalanced


def test_train_period_samples():
    assert train_period_samples(FS, 30.0) == 10_000
    assert train_period_samples(2048.0, 32.0) == 64


def test_duration_must_be_positive():
    with pytest.raises(ParameterError):
        synthesize_lf(LfParams(amplitude=1.0), 0.0, FS)


@pytest.mark.parametrize("params", [LfParams(amplitude=1.0), HfParams(amplitude=1.0)])
def test_onset_times_match_synthesis(params):
    train = synthesize(params, 1.5, FS)
    np.testing.assert_allclose(onset_times(params, 1.5, FS), train.onset_times)


def test_params_from_config_and_default_amplitude():
    config = default_experiment_config()
    level = config.level(0.40)
    hf = params_from_config(StimProtocol.HF, default_amplitude(StimProtocol.HF, level), config.stim)
    lf = params_from_config(StimProtocol.LF, default_amplitude(StimProtocol.LF, level), config.stim)
    assert isinstance(hf, HfParams) and hf.amplitude == pytest.approx(0.59)
    assert isinstance(lf, LfParams) and lf.amplitude == pytest.approx(6.13)
    assert hf.with_amplitude(1.0).pulses_per_half_burst == 166


def test_export_stim_excerpt(tmp_path):
    train = synthesize_lf(LfParams(amplitude=5.0), 1.0, FS)
    csv_path, sidecar = export_stim_excerpt(train, tmp_path / "excerpt.csv", seconds=0.1)
    frame = pd.read_csv(csv_path)
    assert list(frame.columns) == ["time_s", "current_mA"]
    assert len(frame) == 10_000
    np.testing.assert_allclose(frame["current_mA"].to_numpy(), train.samples[:10_000])
    meta = json.loads(sidecar.read_text())
    assert meta["excerpt_seconds"] == pytest.approx(0.1)


def test_export_rejects_nonpositive_length(tmp_path):
    train = synthesize_lf(LfParams(amplitude=5.0), 0.1, FS)
    with pytest.raises(ParameterError):
        export_stim_excerpt(train, tmp_path / "x.csv", seconds=0.0)
