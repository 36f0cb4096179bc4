"""
EMG synthesis tests - MUAP superposition, noise and artifact injection
"""
import numpy as np
import pytest

from app.errors import ParameterError
from app.models.axon import SpikeTrainSet
from app.models.emg import MuapTemplate, RecordLabel, SpatialPolicy
from app.models.muscle import MotorUnit
from app.services.emg_synth import (
    band_limited_noise,
    drift_profile,
    inject_hf_artifact,
    inject_lf_artifact,
    make_baseline,
    make_templates,
    synthesize_emg,
)
from config.config import EmgConfig


def _units(n=6):
    return [
        MotorUnit(id=i, axon_id=i, twitch_peak=0.01 * (i + 1), contraction_time=0.05,
                  fatigue_rate=0.0, recovery_rate=0.0)
        for i in range(n)
    ]


def test_templates_are_zero_mean_and_bounded(small_emg_config):
    templates = make_templates(_units(), seed=3, config=small_emg_config)
    assert len(templates) == 6
    for template in templates:
        assert abs(template.waveform.mean()) < 1e-12
        assert np.max(np.abs(template.waveform)) <= 2.0
        assert 0.010 * 2048 - 1 <= len(template.waveform) <= 0.015 * 2048 + 1
    amplitudes = [t.amplitude for t in templates]
    assert amplitudes[-1] == pytest.approx(small_emg_config.muap_amplitude_mv)
    assert all(a < b for a, b in zip(amplitudes, amplitudes[1:]))


def test_focal_policy_centres_largest_unit():
    config = EmgConfig()
    focal = make_templates(_units(), seed=3, policy=SpatialPolicy.FOCAL, config=config)
    dispersed = make_templates(_units(), seed=3, policy=SpatialPolicy.DISPERSED, config=config)
    assert focal[-1].center == pytest.approx((3.5, 7.5))
    for a, b in zip(focal, dispersed):
        np.testing.assert_array_equal(a.waveform, b.waveform)
        assert a.spatial_decay == b.spatial_decay


def test_channel_weights_peak_at_centre():
    template = MuapTemplate(unit_id=0, center=(1.0, 2.0), spatial_decay=10.0,
                            waveform=np.ones(3), amplitude=1.0)
    weights = template.channel_weights(2, 4, 10.0)
    assert weights.shape == (8,)
    assert weights[1 * 4 + 2] == pytest.approx(1.0)
    assert weights[0] == pytest.approx(np.exp(-(1 + 4) * 100.0 / 200.0))


def test_noise_free_emg_is_template_superposition(small_emg_config):
    templates = make_templates(_units(2), seed=5, config=small_emg_config)
    spikes = SpikeTrainSet(times=[np.array([0.25]), np.array([0.25, 0.5])], duration=1.0)
    emg = synthesize_emg(spikes, templates, 1.0, 0.0, seed=1, config=small_emg_config)
    assert emg.channels.dtype == np.float32
    assert emg.channels.shape == (8, 2048)

    expected = np.zeros((8, 2048))
    for template, times in zip(templates, spikes.times):
        weights = template.amplitude * template.channel_weights(2, 4, small_emg_config.pitch_mm)
        for t in times:
            start = int(np.rint(t * 2048))
            expected[:, start:start + len(template.waveform)] += weights[:, None] * template.waveform[None, :]
    np.testing.assert_allclose(emg.channels, expected, atol=1e-6)


def test_spike_gains_scale_each_muap(small_emg_config):
    templates = make_templates(_units(2), seed=5, config=small_emg_config)
    spikes = SpikeTrainSet(times=[np.array([0.25]), np.array([0.5])], duration=1.0)
    full = synthesize_emg(spikes, templates, 1.0, 0.0, seed=1, config=small_emg_config)
    only_second = synthesize_emg(spikes, templates, 1.0, 0.0, seed=1, config=small_emg_config,
                                 spike_gains=[np.array([0.0]), np.array([1.0])])
    halved = synthesize_emg(spikes, templates, 1.0, 0.0, seed=1, config=small_emg_config,
                            spike_gains=[np.array([0.5]), np.array([0.5])])
    np.testing.assert_allclose(halved.channels, 0.5 * full.channels, atol=1e-6)
    start = int(np.rint(0.5 * 2048))
    np.testing.assert_allclose(only_second.channels[:, start:], full.channels[:, start:], atol=1e-6)
    assert not np.any(only_second.channels[:, :start])
    with pytest.raises(ParameterError):
        synthesize_emg(spikes, templates, 1.0, 0.0, seed=1, config=small_emg_config,
                       spike_gains=[np.array([1.0, 1.0]), np.array([1.0])])


def test_emg_requires_aligned_templates(small_emg_config):
    templates = make_templates(_units(2), seed=5, config=small_emg_config)
    with pytest.raises(ParameterError):
        synthesize_emg(SpikeTrainSet(times=[np.zeros(0)]), templates, 1.0, 0.0, seed=1, config=small_emg_config)


def test_band_limited_noise_rms_and_seed(small_emg_config):
    a = band_limited_noise(8, 4096, 0.005, seed=2, config=small_emg_config)
    b = band_limited_noise(8, 4096, 0.005, seed=2, config=small_emg_config)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(np.sqrt(np.mean(a.astype(np.float64) ** 2, axis=1)), 0.005, rtol=1e-4)
    assert not np.any(band_limited_noise(8, 100, 0.0, seed=2, config=small_emg_config))


def test_baseline_is_clean_noise(small_emg_config):
    baseline = make_baseline(2.0, 0.005, seed=4, config=small_emg_config)
    assert baseline.label is RecordLabel.CLEAN
    assert baseline.length == 4096


def test_lf_artifact_adds_to_clean_record(noise_record):
    stim = np.arange(1, 100) / 30.0
    contaminated, truth = inject_lf_artifact(noise_record, stim, 100.0, seed=8)
    assert contaminated.label is RecordLabel.LF_CONTAMINATED
    np.testing.assert_array_equal(contaminated.channels, noise_record.channels + truth.artifact)
    assert truth.n_events == stim.size
    assert np.all(np.abs(truth.event_times - stim) <= 0.5e-3 + 0.5 / 2048)


def test_lf_artifact_peak_is_ratio_times_rms(noise_record):
    stim = np.arange(1, 100) / 30.0
    _, truth = inject_lf_artifact(noise_record, stim, 50.0, seed=8, jitter=0.0, amplitude_jitter=0.0)
    rms = np.sqrt(np.mean(noise_record.channels.astype(np.float64) ** 2, axis=1))
    np.testing.assert_allclose(np.max(np.abs(truth.artifact), axis=1), 50.0 * rms, rtol=1e-5)
    np.testing.assert_allclose(truth.event_times, np.rint(stim * 2048) / 2048)


def test_lf_artifact_preconditions(noise_record):
    with pytest.raises(ParameterError):
        inject_lf_artifact(noise_record, np.array([0.5]), 5.0, seed=1)
    with pytest.raises(ParameterError):
        inject_lf_artifact(noise_record, np.array([10.0]), 100.0, seed=1)


def test_drift_profile_triangle():
    np.testing.assert_allclose(drift_profile(np.array([0.0, 4.0, 40.0, 60.0, 80.0])), [0.0, 0.1, 1.0, 0.5, 0.0])


def test_drift_within_four_seconds_is_a_tenth():
    t = np.arange(0.0, 200.0, 0.01)
    profile = drift_profile(t)
    assert profile.min() >= 0.0 and profile.max() <= 1.0
    assert np.max(np.abs(profile[400:] - profile[:-400])) <= 0.1 + 1e-9


def test_hf_artifact_drift_decorrelates_slowly(small_emg_config):
    clean = make_baseline(12.0, 0.005, 9, small_emg_config)
    schedule = np.arange(0, 360) / 30.0
    _, truth = inject_hf_artifact(clean, schedule, 100.0, 0.5, 4e-3, seed=6)
    artifact = truth.artifact.astype(np.float64)
    start, near_lag, far_lag = 2048, 1024, 8 * 2048
    for ch in range(clean.n_channels):
        reference = artifact[ch, start:start + 1024]
        near = np.corrcoef(reference, artifact[ch, start + near_lag:start + near_lag + 1024])[0, 1]
        far = np.corrcoef(reference, artifact[ch, start + far_lag:start + far_lag + 1024])[0, 1]
        assert near >= 0.99
        assert far < near - 1e-3


def test_hf_artifact_without_drift_repeats_every_fifteen_bursts(noise_record):
    schedule = np.arange(0, 120) / 30.0
    contaminated, truth = inject_hf_artifact(noise_record, schedule, 100.0, 0.0, 0.0, seed=6)
    assert contaminated.label is RecordLabel.HF_CONTAMINATED
    np.testing.assert_array_equal(contaminated.channels, noise_record.channels + truth.artifact)
    scale = float(np.max(np.abs(truth.artifact)))
    np.testing.assert_allclose(truth.artifact[:, 1024:], truth.artifact[:, :-1024], atol=1e-6 * scale)


def test_hf_artifact_peak_matches_ratio(noise_record):
    schedule = np.arange(0, 120) / 30.0
    _, truth = inject_hf_artifact(noise_record, schedule, 100.0, 0.0, 0.0, seed=6)
    rms = np.sqrt(np.mean(noise_record.channels.astype(np.float64) ** 2, axis=1))
    peaks = np.max(np.abs(truth.artifact), axis=1)
    assert np.all(peaks <= 100.0 * rms * (1 + 1e-5))
    assert np.all(peaks >= 0.95 * 100.0 * rms)


def test_hf_artifact_starts_at_first_burst(noise_record):
    schedule = 1.0 + np.arange(0, 60) / 30.0
    _, truth = inject_hf_artifact(noise_record, schedule, 100.0, 0.5, 1e-5, seed=6)
    assert not np.any(truth.artifact[:, :2048])
    assert np.any(truth.artifact[:, 2048:])


def test_hf_schedule_must_be_periodic(noise_record):
    with pytest.raises(ParameterError):
        inject_hf_artifact(noise_record, np.array([0.0, 0.02, 0.1]), 100.0, 0.0, 0.0, seed=1)
    with pytest.raises(ParameterError):
        inject_hf_artifact(noise_record, np.zeros(0), 100.0, 0.0, 0.0, seed=1)
