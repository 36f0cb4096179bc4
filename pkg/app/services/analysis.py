"""
Analysis Service - force and EMG metrics per trial and across the battery
"""
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog
from numpy.lib.stride_tricks import sliding_window_view
from scipy.interpolate import CubicSpline

from app.errors import ParameterError
from app.models.analysis import PeriodSet, SpatialRmsMap, TrialMetrics
from app.models.emg import EmgGridRecord
from app.models.muscle import ForceTrace
from config.config import AnalysisConfig

logger = structlog.get_logger(__name__)

MATCH_TOLERANCE_PCT = 2.0


def smooth_force(trace: ForceTrace, window: float = 1.0, step: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """
    Moving mean of a force trace

    Args:
        trace: force samples
        window: averaging window in seconds
        step: hop between windows in seconds

    Returns:
        (window centre times, window means); floor((T - window)/step) + 1 values
    """
    width = int(round(window * trace.sample_rate))
    hop = int(round(step * trace.sample_rate))
    if width < 1 or hop < 1:
        raise ParameterError("window and step must cover at least one sample", window=window, step=step)
    if len(trace.samples) < width:
        raise ParameterError("trace is shorter than the smoothing window",
                             duration=trace.duration, window=window)
    windows = sliding_window_view(np.asarray(trace.samples, dtype=np.float64), width)[::hop]
    centers = (np.arange(len(windows)) * hop + width / 2.0) / trace.sample_rate
    return centers, windows.mean(axis=1)


def period_average(times: np.ndarray, values: np.ndarray, periods: PeriodSet) -> np.ndarray:
    """Mean of the values whose time falls in each half-open period [start, end)"""
    return np.asarray([_window_mean(times, values, period) for period in periods])


def _window_mean(times: np.ndarray, values: np.ndarray, period: Tuple[float, float]) -> float:
    start, end = period
    times = np.asarray(times)
    inside = (times >= start) & (times < end)
    if not inside.any():
        raise ParameterError("period holds no samples", period=[start, end])
    return float(np.asarray(values, dtype=np.float64)[inside].mean())


def residual_force(trace: ForceTrace, last_period: Tuple[float, float], mvc_force: float) -> float:
    """Mean force over the final period as %MVC"""
    if mvc_force <= 0:
        raise ParameterError("MVC must be positive", mvc=mvc_force)
    return 100.0 * _window_mean(trace.times, trace.samples, last_period) / mvc_force


def segment_rms(channel: np.ndarray, sample_rate: float, period: Tuple[float, float]) -> float:
    """Mean of per-second RMS over consecutive whole seconds of a period"""
    return float(np.mean(_segment_rms_matrix(np.asarray(channel)[None, :], sample_rate, period)))


def _segment_rms_matrix(channels: np.ndarray, sample_rate: float, period: Tuple[float, float]) -> np.ndarray:
    start, end = period
    per_second = int(round(sample_rate))
    lo = int(round(start * sample_rate))
    count = int(np.floor(end - start + 1e-9))
    if count < 1:
        raise ParameterError("period must be at least 1 s", period=[start, end])
    hi = lo + count * per_second
    if hi > channels.shape[1]:
        raise ParameterError("period extends beyond the record", period=[start, end])
    block = channels[:, lo:hi].astype(np.float64).reshape(channels.shape[0], count, per_second)
    return np.sqrt(np.mean(block ** 2, axis=2))


def grid_period_rms(emg: EmgGridRecord, periods: PeriodSet) -> np.ndarray:
    """Segment RMS per period, averaged over all channels"""
    return np.asarray([np.mean(_segment_rms_matrix(emg.channels, emg.sample_rate, p)) for p in periods])


def normalized_rms(rms_per_period: Sequence[float]) -> np.ndarray:
    """Divide each period's RMS by the initial-period RMS"""
    values = np.asarray(rms_per_period, dtype=np.float64)
    if values.size == 0 or values[0] <= 0:
        raise ParameterError("initial-period RMS must be positive")
    return values / values[0]


def grid_positions(count: int, factor: int) -> np.ndarray:
    """count·factor electrode positions spread evenly from the first electrode to the last"""
    return np.linspace(0.0, count - 1, count * factor)


def _spline_axis(values: np.ndarray, axis: int, positions: np.ndarray) -> np.ndarray:
    count = values.shape[axis]
    if count < 2:
        return np.repeat(values, len(positions), axis=axis)
    return CubicSpline(np.arange(count), values, axis=axis, bc_type="natural")(positions)


def interpolate_grid(base: np.ndarray, rows_at: np.ndarray, cols_at: np.ndarray) -> np.ndarray:
    """Natural bicubic spline through the electrode values, evaluated at fractional electrode positions"""
    return _spline_axis(_spline_axis(base, 0, np.asarray(rows_at, dtype=np.float64)), 1,
                        np.asarray(cols_at, dtype=np.float64))


def spatial_rms_map(emg: EmgGridRecord, window: Tuple[float, float], factor: int = 10) -> SpatialRmsMap:
    """
    Per-electrode RMS over a window, upsampled with a natural bicubic spline

    Each axis gets `factor` samples per electrode, spread from the first to the
    last electrode, so the spline is never extrapolated past the grid and the
    corners are electrodes. Interior electrodes fall between samples;
    interpolate_grid evaluates the same spline at any position.
    """
    start, end = window
    if end - start < 1.0:
        raise ParameterError("map window must be at least 1 s", window=[start, end])
    lo, hi = int(round(start * emg.sample_rate)), int(round(end * emg.sample_rate))
    if lo < 0 or hi > emg.length:
        raise ParameterError("map window lies outside the record", window=[start, end])
    data = emg.channels[:, lo:hi].astype(np.float64)
    base = np.sqrt(np.mean(data ** 2, axis=1)).reshape(emg.rows, emg.cols)

    surface = interpolate_grid(base, grid_positions(emg.rows, factor), grid_positions(emg.cols, factor))
    return SpatialRmsMap(base=base, interpolated=surface, factor=factor, window=(start, end))


def analyze_trial(
    condition: str,
    level: float,
    force: ForceTrace,
    mvc_force: float,
    periods: PeriodSet,
    emg: Optional[EmgGridRecord] = None,
    stim_amplitude: Optional[float] = None,
    config: Optional[AnalysisConfig] = None,
) -> TrialMetrics:
    """All per-trial force and EMG metrics"""
    config = config or AnalysisConfig()
    periods.check_within(force.duration)
    centers, smoothed = smooth_force(force, config.smooth_window, config.smooth_step)
    period_force = 100.0 * period_average(centers, smoothed, periods) / mvc_force
    metrics = TrialMetrics(
        condition=condition,
        level=level,
        duration=force.duration,
        mvc=mvc_force,
        stim_amplitude=stim_amplitude,
        periods=list(periods.periods),
        initial_force_pct=float(period_force[0]),
        period_force_pct=[float(x) for x in period_force],
        residual_pct=residual_force(force, periods.last, mvc_force),
    )
    if emg is not None:
        rms = grid_period_rms(emg, periods)
        metrics.period_rms = [float(x) for x in rms]
        metrics.normalized_rms = [float(x) for x in normalized_rms(rms)]
        window = tuple(config.map_window) if config.map_window else periods.last
        metrics.rms_map = spatial_rms_map(emg, window, config.interpolation_factor)
    logger.info("Trial analyzed", trial=metrics.key, residual_pct=round(metrics.residual_pct, 3))
    return metrics


def initial_force_check(metrics: Sequence[TrialMetrics], tolerance: float = MATCH_TOLERANCE_PCT) -> Dict[str, Dict]:
    """Initial 5-15 s force per condition and whether each level is matched within tolerance (%MVC)"""
    result: Dict[str, Dict] = {}
    for m in metrics:
        entry = result.setdefault(f"{m.level:.2f}", {"forces_pct_mvc": {}})
        entry["forces_pct_mvc"][m.condition] = m.initial_force_pct
    for entry in result.values():
        forces = list(entry["forces_pct_mvc"].values())
        entry["spread_pct_mvc"] = max(forces) - min(forces)
        entry["matched"] = bool(entry["spread_pct_mvc"] <= tolerance)
    return result


def _level_order(metrics: Sequence[TrialMetrics]) -> List[str]:
    return list(dict.fromkeys(f"{m.level:.2f}" for m in metrics))


def _condition_order(metrics: Sequence[TrialMetrics]) -> List[str]:
    return list(dict.fromkeys(m.condition for m in metrics))


def amplitude_table(metrics: Sequence[TrialMetrics]) -> pd.DataFrame:
    """Stimulation amplitude (mA) per protocol and level"""
    rows = [m for m in metrics if m.stim_amplitude is not None]
    frame = pd.DataFrame(
        [{"protocol": m.condition, "level": f"{m.level:.2f}", "amplitude_mA": m.stim_amplitude} for m in rows],
        columns=["protocol", "level", "amplitude_mA"],
    )
    table = frame.pivot(index="protocol", columns="level", values="amplitude_mA")
    return table.reindex(index=_condition_order(rows), columns=_level_order(rows))


def residual_table(metrics: Sequence[TrialMetrics]) -> pd.DataFrame:
    """Residual force (%MVC) per condition and level"""
    frame = pd.DataFrame(
        [{"condition": m.condition, "level": f"{m.level:.2f}", "residual_pct_mvc": m.residual_pct} for m in metrics],
        columns=["condition", "level", "residual_pct_mvc"],
    )
    table = frame.pivot(index="condition", columns="level", values="residual_pct_mvc")
    return table.reindex(index=_condition_order(metrics), columns=_level_order(metrics))


def normalized_rms_table(metrics: Sequence[TrialMetrics]) -> pd.DataFrame:
    """Long table of normalized RMS per condition, level and period"""
    records = []
    for m in metrics:
        for index, ((start, end), value) in enumerate(zip(m.periods, m.normalized_rms)):
            records.append({
                "condition": m.condition,
                "level": f"{m.level:.2f}",
                "period": index,
                "start_s": start,
                "end_s": end,
                "normalized_rms": value,
            })
    return pd.DataFrame(records, columns=["condition", "level", "period", "start_s", "end_s", "normalized_rms"])
