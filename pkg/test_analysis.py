"""
Analysis tests - force smoothing, residual force, EMG RMS and the spatial map
"""
import numpy as np
import pytest

from app.errors import ParameterError
from app.models.analysis import PeriodSet, TrialMetrics
from app.models.emg import EmgGridRecord, RecordLabel
from app.models.muscle import ForceTrace
from app.services.analysis import (
    amplitude_table,
    analyze_trial,
    grid_period_rms,
    grid_positions,
    initial_force_check,
    interpolate_grid,
    normalized_rms,
    normalized_rms_table,
    period_average,
    residual_force,
    residual_table,
    segment_rms,
    smooth_force,
    spatial_rms_map,
)

FS_EMG = 2048.0
PERIODS = PeriodSet.of([(5.0, 15.0), (15.0, 20.0)])


def _ramp(duration=20.0, fs=1000.0):
    return ForceTrace(sample_rate=fs, samples=np.arange(int(duration * fs)) / fs)


def _sine_record(amplitudes, seconds=20):
    t = np.arange(int(seconds * FS_EMG)) / FS_EMG
    channels = np.outer(amplitudes, np.sin(2 * np.pi * 50.0 * t))
    return EmgGridRecord(sample_rate=FS_EMG, channels=channels, rows=2, cols=4, label=RecordLabel.CLEAN)


def test_smoothing_window_count():
    centers, values = smooth_force(_ramp())
    assert len(values) == int(np.floor((20.0 - 1.0) / 0.5)) + 1
    assert centers[0] == pytest.approx(0.5)
    np.testing.assert_allclose(values, centers - 0.0005, atol=1e-12)


def test_smoothing_rejects_short_traces():
    with pytest.raises(ParameterError):
        smooth_force(_ramp(duration=0.5))
    with pytest.raises(ParameterError):
        smooth_force(_ramp(), window=0.0)


def test_period_average_of_ramp():
    centers, values = smooth_force(_ramp())
    averages = period_average(centers, values, PERIODS)
    assert averages[0] == pytest.approx(9.75 - 0.0005)
    assert averages[1] == pytest.approx(17.25 - 0.0005)
    with pytest.raises(ParameterError):
        period_average(centers, values, PeriodSet.of([(5.0, 15.0), (30.0, 40.0)]))


def test_residual_force_of_constant_trace():
    trace = ForceTrace(sample_rate=1000.0, samples=np.full(20000, 0.0847 * 100.0))
    assert residual_force(trace, (15.0, 20.0), 100.0) == pytest.approx(8.47)
    with pytest.raises(ParameterError):
        residual_force(trace, (15.0, 20.0), 0.0)


def test_segment_rms_of_sine():
    record = _sine_record(np.full(8, 0.2), seconds=4)
    assert segment_rms(record.channels[0], FS_EMG, (1.0, 3.0)) == pytest.approx(0.2 / np.sqrt(2), rel=1e-9)
    assert segment_rms(record.channels[0], FS_EMG, (1.0, 3.7)) == pytest.approx(0.2 / np.sqrt(2), rel=1e-9)


def test_segment_rms_bounds():
    record = _sine_record(np.full(8, 0.2), seconds=4)
    with pytest.raises(ParameterError):
        segment_rms(record.channels[0], FS_EMG, (1.0, 1.5))
    with pytest.raises(ParameterError):
        segment_rms(record.channels[0], FS_EMG, (2.0, 6.0))


def test_grid_rms_and_normalization():
    amplitudes = np.linspace(0.1, 0.8, 8)
    rms = grid_period_rms(_sine_record(amplitudes), PERIODS)
    np.testing.assert_allclose(rms, np.mean(amplitudes) / np.sqrt(2), rtol=1e-9)
    normalized = normalized_rms([0.02, 0.03, 0.01])
    assert normalized[0] == 1.0
    np.testing.assert_allclose(normalized, [1.0, 1.5, 0.5])
    with pytest.raises(ParameterError):
        normalized_rms([0.0, 0.1])


def test_spatial_map_passes_through_electrodes(noise_record):
    rms_map = spatial_rms_map(noise_record, (1.0, 3.0))
    assert rms_map.interpolated.shape == (20, 40)
    np.testing.assert_allclose(interpolate_grid(rms_map.base, np.arange(2), np.arange(4)), rms_map.base, atol=1e-9)
    np.testing.assert_allclose(
        rms_map.interpolated, interpolate_grid(rms_map.base, grid_positions(2, 10), grid_positions(4, 10)), atol=1e-12
    )
    expected = np.sqrt(np.mean(noise_record.channels[:, 2048:3 * 2048].astype(np.float64) ** 2, axis=1))
    np.testing.assert_allclose(rms_map.base.ravel(), expected, rtol=1e-9)
    assert np.all(rms_map.display >= 0)


def test_spatial_map_stays_inside_the_grid():
    positions = grid_positions(8, 10)
    assert positions.size == 80
    assert positions[0] == 0.0 and positions[-1] == 7.0


def test_spatial_map_corners_are_electrodes(noise_record):
    rms_map = spatial_rms_map(noise_record, (0.0, 2.0))
    surface, base = rms_map.interpolated, rms_map.base
    for r in (0, -1):
        for c in (0, -1):
            assert surface[r, c] == pytest.approx(base[r, c], rel=1e-9)


def test_spatial_map_single_active_corner_channel():
    channels = np.zeros((8, 2 * 2048), dtype=np.float32)
    channels[7] = 1.0
    record = EmgGridRecord(sample_rate=FS_EMG, channels=channels, rows=2, cols=4)
    surface = spatial_rms_map(record, (0.0, 2.0)).interpolated
    peak = np.unravel_index(np.argmax(surface), surface.shape)
    assert peak == (surface.shape[0] - 1, surface.shape[1] - 1)
    assert surface.max() == pytest.approx(1.0, rel=1e-9)


def test_spatial_map_single_active_channel_on_full_grid():
    channels = np.zeros((128, 2 * 2048), dtype=np.float32)
    channels[3 * 16 + 7] = 1.0
    record = EmgGridRecord(sample_rate=FS_EMG, channels=channels, rows=8, cols=16)
    rms_map = spatial_rms_map(record, (0.0, 2.0))
    surface = rms_map.interpolated
    assert surface.shape == (80, 160)
    row, col = np.unravel_index(np.argmax(surface), surface.shape)
    assert abs(grid_positions(8, 10)[row] - 3.0) <= 7.0 / 79
    assert abs(grid_positions(16, 10)[col] - 7.0) <= 15.0 / 159
    assert interpolate_grid(rms_map.base, [3.0], [7.0])[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert surface.max() <= 1.05


def test_spatial_map_uniform_record_is_flat():
    channels = np.full((8, 3 * 2048), 0.02, dtype=np.float32)
    record = EmgGridRecord(sample_rate=FS_EMG, channels=channels, rows=2, cols=4)
    rms_map = spatial_rms_map(record, (0.5, 2.5))
    np.testing.assert_allclose(rms_map.base, 0.02, rtol=1e-6)
    np.testing.assert_allclose(rms_map.interpolated, 0.02, rtol=1e-6)


def test_spatial_map_single_row_grid(rng):
    channels = (0.01 * rng.standard_normal((4, 2 * 2048))).astype(np.float32)
    record = EmgGridRecord(sample_rate=FS_EMG, channels=channels, rows=1, cols=4)
    rms_map = spatial_rms_map(record, (0.0, 2.0), factor=5)
    assert rms_map.interpolated.shape == (5, 20)
    np.testing.assert_allclose(rms_map.interpolated, np.repeat(rms_map.interpolated[:1], 5, axis=0))
    np.testing.assert_allclose(rms_map.interpolated[0, [0, -1]], rms_map.base[0, [0, -1]], rtol=1e-9)


def test_spatial_map_window_checks(noise_record):
    with pytest.raises(ParameterError):
        spatial_rms_map(noise_record, (1.0, 1.5))
    with pytest.raises(ParameterError):
        spatial_rms_map(noise_record, (3.0, 5.0))


def test_period_set_validation():
    with pytest.raises(ParameterError):
        PeriodSet.of([(0.0, 10.0)])
    with pytest.raises(ParameterError):
        PeriodSet.of([(5.0, 15.0), (14.0, 20.0)])
    with pytest.raises(ParameterError):
        PERIODS.check_within(18.0)
    assert PERIODS.last == (15.0, 20.0)


def test_analyze_trial_with_emg():
    force = ForceTrace(sample_rate=1000.0, samples=np.full(20000, 10.0))
    metrics = analyze_trial("HF", 0.10, force, 100.0, PERIODS, emg=_sine_record(np.full(8, 0.2)),
                            stim_amplitude=3.55)
    assert metrics.key == "HF_0.10"
    assert metrics.initial_force_pct == pytest.approx(10.0)
    assert metrics.residual_pct == pytest.approx(10.0)
    assert metrics.normalized_rms == pytest.approx([1.0, 1.0])
    assert metrics.rms_map.window == (15.0, 20.0)


def test_trial_metrics_serialization():
    force = ForceTrace(sample_rate=1000.0, samples=np.full(20000, 25.0))
    metrics = analyze_trial("Vol", 0.25, force, 100.0, PERIODS)
    restored = TrialMetrics.from_dict(metrics.to_dict())
    assert restored.key == "Vol_0.25"
    assert restored.stim_amplitude is None
    assert restored.periods == [(5.0, 15.0), (15.0, 20.0)]
    assert restored.normalized_rms == []


def _metric(condition, level, initial, residual, amplitude=None):
    return TrialMetrics(condition=condition, level=level, duration=20.0, mvc=100.0, stim_amplitude=amplitude,
                        periods=[(5.0, 15.0), (15.0, 20.0)], initial_force_pct=initial,
                        period_force_pct=[initial, residual], residual_pct=residual,
                        period_rms=[0.02, 0.03], normalized_rms=[1.0, 1.5])


@pytest.fixture
def battery_metrics():
    return [
        _metric("Vol", 0.10, 10.2, 9.0),
        _metric("HF", 0.10, 9.4, 4.0, amplitude=3.55),
        _metric("LF", 0.10, 10.9, 6.0, amplitude=5.22),
        _metric("Vol", 0.25, 25.0, 20.0),
        _metric("HF", 0.25, 20.0, 8.0, amplitude=4.01),
        _metric("LF", 0.25, 25.5, 12.0, amplitude=5.76),
    ]


def test_initial_force_check(battery_metrics):
    check = initial_force_check(battery_metrics)
    assert check["0.10"]["matched"] is True
    assert check["0.10"]["spread_pct_mvc"] == pytest.approx(1.5)
    assert check["0.25"]["matched"] is False


def test_summary_tables(battery_metrics):
    amplitudes = amplitude_table(battery_metrics)
    assert list(amplitudes.index) == ["HF", "LF"]
    assert list(amplitudes.columns) == ["0.10", "0.25"]
    assert amplitudes.loc["LF", "0.25"] == 5.76

    residuals = residual_table(battery_metrics)
    assert list(residuals.index) == ["Vol", "HF", "LF"]
    assert residuals.loc["HF", "0.10"] == 4.0

    long = normalized_rms_table(battery_metrics)
    assert len(long) == 12
    assert set(long["period"]) == {0, 1}
