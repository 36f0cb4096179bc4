"""
Muscle Force Service - twitch superposition, fatigue and force control
Converts spike trains to force, calibrates stimulation amplitude and
simulates voluntary contractions with effort compensation
"""
import dataclasses
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.signal import lfilter

from app.errors import CalibrationError, ParameterError
from app.models.axon import AxonPool, SpikeTrainSet
from app.models.muscle import CalibrationResult, Condition, ForceTrace, MotorUnit, TrialRecord
from app.models.stimulation import StimParams
from config.config import ExperimentConfig, ForceConfig, VoluntaryConfig

logger = structlog.get_logger(__name__)


def build_motor_units(pool: AxonPool, config: Optional[ForceConfig] = None) -> List[MotorUnit]:
    """
    Attach a motor unit to every axon

    Twitch peaks grow exponentially with diameter rank, contraction times shrink,
    and fatigue rate is proportional to twitch peak.
    """
    config = config or ForceConfig()
    n = len(pool)
    diameters = pool.diameters
    rank = np.argsort(np.argsort(diameters, kind="stable"), kind="stable")
    position = rank / (n - 1) if n > 1 else np.ones(n)
    peaks = config.twitch_peak_min * config.twitch_peak_range ** position
    times = config.contraction_time_max * config.contraction_time_range ** (-position)
    peak_max = config.twitch_peak_min * config.twitch_peak_range
    return [
        MotorUnit(
            id=i,
            axon_id=axon.id,
            twitch_peak=float(peaks[i]),
            contraction_time=float(times[i]),
            fatigue_rate=float(config.fatigue_rate_max * peaks[i] / peak_max),
            recovery_rate=config.recovery_rate,
            phi_min=config.phi_min,
            rate_max=config.rate_max,
        )
        for i, axon in enumerate(pool.axons)
    ]


def twitch(unit: MotorUnit, t):
    """Twitch force at time t after a spike"""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ParameterError("twitch time must be non-negative")
    x = t_arr / unit.contraction_time
    value = unit.fatigue_factor * unit.twitch_peak * x * np.exp(1.0 - x)
    return float(value) if np.ndim(value) == 0 else value


def _fatigue_step(phi, rate, fatigue_rate, recovery_rate, phi_min, rate_max, dt):
    """Exact step of the rate-dependent fatigue ODE for a piecewise-constant rate"""
    load = np.asarray(rate, dtype=np.float64) / rate_max
    k_fatigue = fatigue_rate * load
    k_recover = recovery_rate * np.maximum(0.0, 1.0 - load)
    k_total = k_fatigue + k_recover
    with np.errstate(invalid="ignore", divide="ignore"):
        steady = np.where(k_total > 0, (k_fatigue * phi_min + k_recover) / np.where(k_total > 0, k_total, 1.0), phi)
    new_phi = steady + (phi - steady) * np.exp(-k_total * dt)
    return np.clip(new_phi, phi_min, 1.0)


def update_fatigue(unit: MotorUnit, rate_hz: float, dt: float) -> MotorUnit:
    """
    Advance one unit's fatigue factor

    dphi/dt = -F*(phi - phi_min)*(r/r_max) + R*(1 - phi)*max(0, 1 - r/r_max)
    """
    if rate_hz < 0:
        raise ParameterError("firing rate must be non-negative", rate_hz=rate_hz)
    phi = _fatigue_step(
        unit.fatigue_factor, rate_hz, unit.fatigue_rate, unit.recovery_rate, unit.phi_min, unit.rate_max, dt
    )
    return dataclasses.replace(unit, fatigue_factor=float(phi))


def mvc(units: Sequence[MotorUnit]) -> float:
    """Steady-state tetanic force with every unit at rate_max and no fatigue"""
    if not units:
        raise ParameterError("MVC needs at least one motor unit")
    return float(sum(u.tetanic_force for u in units))


def _unit_arrays(units: Sequence[MotorUnit]):
    return (
        np.array([u.twitch_peak for u in units]),
        np.array([u.contraction_time for u in units]),
        np.array([u.fatigue_rate for u in units]),
        np.array([u.recovery_rate for u in units]),
        np.array([u.fatigue_factor for u in units]),
    )


def estimate_rates(spikes: SpikeTrainSet, grid: np.ndarray, window: float) -> np.ndarray:
    """Trailing-window firing rate of every unit at each grid time (units x grid)"""
    rates = np.zeros((spikes.n_axons, len(grid)))
    for i, times in enumerate(spikes.times):
        if len(times):
            upper = np.searchsorted(times, grid, side="right")
            lower = np.searchsorted(times, grid - window, side="right")
            rates[i] = (upper - lower) / window
    return rates


def integrate_fatigue(units: Sequence[MotorUnit], rates: np.ndarray, step: float) -> np.ndarray:
    """Fatigue factor of every unit at the start of each step (units x steps)"""
    _, _, fatigue_rate, recovery_rate, phi = _unit_arrays(units)
    phi_min = np.array([u.phi_min for u in units])
    rate_max = np.array([u.rate_max for u in units])
    history = np.empty_like(rates)
    for j in range(rates.shape[1]):
        history[:, j] = phi
        phi = _fatigue_step(phi, rates[:, j], fatigue_rate, recovery_rate, phi_min, rate_max, step)
    return history


def superpose_twitches(
    spike_times: Sequence[np.ndarray],
    weights: Sequence[np.ndarray],
    contraction_times: np.ndarray,
    n_samples: int,
    sample_rate: float,
) -> np.ndarray:
    """
    Sum of weighted twitch kernels, one exact second-order recursion per unit

    The sampled kernel n*r^n*(e*dt/T) is the impulse response of
    b = [0, r*e*dt/T], a = [1, -2r, r^2] with r = exp(-dt/T).
    """
    dt = 1.0 / sample_rate
    total = np.zeros(n_samples)
    for times, weight, contraction_time in zip(spike_times, weights, contraction_times):
        if len(times) == 0:
            continue
        index = np.rint(np.asarray(times) * sample_rate).astype(np.int64)
        keep = index < n_samples
        if not np.any(keep):
            continue
        impulses = np.zeros(n_samples)
        np.add.at(impulses, index[keep], np.asarray(weight)[keep])
        r = math.exp(-dt / contraction_time)
        total += lfilter([0.0, r * math.e * dt / contraction_time], [1.0, -2.0 * r, r * r], impulses)
    return np.maximum(total, 0.0)


def force_with_fatigue(
    spikes: SpikeTrainSet,
    units: Sequence[MotorUnit],
    dt: float,
    duration: Optional[float] = None,
    fatigue: bool = True,
    fatigue_step: float = 0.01,
    rate_window: float = 1.0,
) -> Tuple[ForceTrace, List[MotorUnit], List[np.ndarray]]:
    """Force trace, the units with their end-of-trace fatigue factors and each spike's fatigue factor"""
    if spikes.n_axons != len(units):
        raise ParameterError("spike trains and motor units are not index-aligned",
                             spike_trains=spikes.n_axons, units=len(units))
    duration = duration if duration is not None else spikes.duration
    if duration is None:
        raise ParameterError("force duration is unknown")
    sample_rate = 1.0 / dt
    n_samples = int(round(duration * sample_rate))
    peaks, contraction_times, _, _, phi0 = _unit_arrays(units)

    if fatigue and len(units):
        n_steps = max(1, int(math.ceil(duration / fatigue_step)))
        grid = np.arange(n_steps) * fatigue_step
        history = integrate_fatigue(units, estimate_rates(spikes, grid, rate_window), fatigue_step)
        spike_phi = []
        for i, times in enumerate(spikes.times):
            step = np.minimum((np.asarray(times) / fatigue_step).astype(np.int64), n_steps - 1)
            spike_phi.append(history[i, step])
        end_rates = estimate_rates(spikes, np.array([duration]), rate_window)[:, 0]
        final_phi = [
            update_fatigue(dataclasses.replace(u, fatigue_factor=float(history[i, -1])), float(end_rates[i]), fatigue_step)
            for i, u in enumerate(units)
        ]
    else:
        spike_phi = [np.full(len(t), phi0[i]) for i, t in enumerate(spikes.times)]
        final_phi = list(units)

    weights = [peaks[i] * phi for i, phi in enumerate(spike_phi)]
    samples = superpose_twitches(spikes.times, weights, contraction_times, n_samples, sample_rate)
    return ForceTrace(sample_rate=sample_rate, samples=samples), final_phi, spike_phi


def force_from_spikes(
    spikes: SpikeTrainSet,
    units: Sequence[MotorUnit],
    dt: float,
    duration: Optional[float] = None,
    fatigue: bool = True,
    fatigue_step: float = 0.01,
    rate_window: float = 1.0,
) -> ForceTrace:
    """
    Linear superposition of twitches, each scaled by the unit's fatigue at spike time

    Args:
        spikes: per-unit spike times, index-aligned with units
        units: motor units (fatigue_factor is the starting state)
        dt: force sample period
        duration: trace length; defaults to the spike set's duration
        fatigue: integrate fatigue alongside the spikes
        fatigue_step: fatigue integration grid
        rate_window: trailing window for the firing-rate estimate

    Returns:
        ForceTrace
    """
    trace, _, _ = force_with_fatigue(spikes, units, dt, duration, fatigue, fatigue_step, rate_window)
    return trace


def mean_force_fraction(trace: ForceTrace, window: Tuple[float, float], mvc_force: float) -> float:
    if mvc_force <= 0:
        raise ParameterError("MVC must be positive", mvc=mvc_force)
    return trace.window_mean(*window) / mvc_force


SimulateFn = Callable[[StimParams, float], SpikeTrainSet]


def calibrate_amplitude(
    params: StimParams,
    simulate: SimulateFn,
    units: Sequence[MotorUnit],
    target: float,
    config: Optional[ForceConfig] = None,
) -> CalibrationResult:
    """
    Bisect the stimulation amplitude until the 5-15 s force matches the target

    Args:
        params: protocol parameters; their amplitude is the first guess
        simulate: (params, duration) -> SpikeTrainSet on a fresh pool
        units: motor units at rest
        target: fraction of MVC in (0, 1)
        config: calibration bounds, tolerance and fatigue constants

    Returns:
        CalibrationResult with the chosen amplitude

    Raises:
        CalibrationError when the target is out of reach within the bounds
    """
    config = config or ForceConfig()
    if not 0 < target < 1:
        raise ParameterError("target must lie in (0, 1)", target=target)
    mvc_force = mvc(units)
    window = config.calibration_window
    duration = window[1]
    history = []

    def evaluate(amplitude: float) -> float:
        spikes = simulate(params.with_amplitude(amplitude), duration)
        trace = force_from_spikes(spikes, units, 1.0 / config.sample_rate, duration,
                                  fatigue_step=config.fatigue_step, rate_window=config.rate_window)
        achieved = mean_force_fraction(trace, window, mvc_force)
        history.append({"amplitude_mA": amplitude, "fraction": achieved})
        return achieved

    def best() -> dict:
        return min(history, key=lambda h: abs(h["fraction"] - target))

    def done(achieved: float) -> bool:
        return abs(achieved - target) <= config.calibration_tolerance

    lo, hi = config.amplitude_min, config.amplitude_max
    guess = min(max(params.amplitude, lo), hi)
    if lo < guess < hi:
        achieved = evaluate(guess)
        if done(achieved):
            return CalibrationResult(guess, achieved, target, len(history), history)
        if achieved < target:
            lo = guess
        else:
            hi = guess

    if hi == config.amplitude_max:
        top = evaluate(hi)
        if top < target - config.calibration_tolerance:
            raise CalibrationError(
                "target force unreachable within amplitude bounds",
                best_amplitude=hi,
                best_force_fraction=top,
                protocol=params.protocol.value,
                target=target,
            )
        if done(top):
            return CalibrationResult(hi, top, target, len(history), history)

    while len(history) < config.calibration_iterations and hi - lo > 1e-6:
        mid = 0.5 * (lo + hi)
        achieved = evaluate(mid)
        if done(achieved):
            logger.info("Amplitude calibrated", protocol=params.protocol.value, target=target,
                        amplitude_ma=mid, achieved=achieved, evaluations=len(history))
            return CalibrationResult(mid, achieved, target, len(history), history)
        if achieved < target:
            lo = mid
        else:
            hi = mid

    closest = best()
    if done(closest["fraction"]):
        return CalibrationResult(closest["amplitude_mA"], closest["fraction"], target, len(history), history)
    raise CalibrationError(
        "bisection did not reach the target tolerance",
        best_amplitude=closest["amplitude_mA"],
        best_force_fraction=closest["fraction"],
        protocol=params.protocol.value,
        target=target,
    )


class VoluntaryDrive:
    """Size-principle recruitment thresholds and rate coding for a common drive"""

    def __init__(self, units: Sequence[MotorUnit], config: Optional[VoluntaryConfig] = None):
        self.config = config or VoluntaryConfig()
        self.units = list(units)
        n = len(self.units)
        peaks = np.array([u.twitch_peak for u in self.units])
        self.order = np.argsort(peaks, kind="stable")
        rank = np.empty(n)
        rank[self.order] = np.arange(n) / (n - 1) if n > 1 else 0.0
        c = self.config
        self.thresholds = c.recruitment_range ** rank
        span = (self.thresholds - 1.0) / (c.recruitment_range - 1.0) if c.recruitment_range > 1 else np.zeros(n)
        self.peak_rates = c.peak_rate_first - (c.peak_rate_first - c.peak_rate_last) * span
        last = self.order[-1]
        self.max_drive = float(self.thresholds[last] + (self.peak_rates[last] - c.min_rate) / c.rate_gain)
        self.unit_force = peaks * math.e * np.array([u.contraction_time for u in self.units])

    def rates(self, drive: float) -> np.ndarray:
        c = self.config
        coded = np.minimum(c.rate_gain * (drive - self.thresholds) + c.min_rate, self.peak_rates)
        return np.where(drive >= self.thresholds, coded, 0.0)

    def expected_force(self, drive: float, phi: np.ndarray) -> float:
        """Mean force of the pool at this drive (linear superposition)"""
        return float(np.sum(phi * self.unit_force * self.rates(drive)))

    def drive_for(self, force: float) -> float:
        """Smallest drive whose unfatigued mean force reaches `force`"""
        phi = np.ones(len(self.units))
        lo, hi = 0.0, self.max_drive
        if self.expected_force(hi, phi) <= force:
            return hi
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if self.expected_force(mid, phi) < force:
                lo = mid
            else:
                hi = mid
        return hi


def _rate_coded_spikes(rates: np.ndarray, step: float, cv: float, rng: np.random.Generator) -> List[np.ndarray]:
    """Spike times from piecewise-constant rates with jittered phase targets"""
    n_units, n_steps = rates.shape
    spikes = []
    for i in range(n_units):
        phase = np.concatenate([[0.0], np.cumsum(rates[i] * step)])
        total = phase[-1]
        if total < 1.0:
            spikes.append(np.zeros(0))
            continue
        offset = rng.random()
        targets = np.arange(1, int(total) + 2) - offset
        if cv > 0:
            targets = np.sort(targets + cv * rng.standard_normal(len(targets)))
        targets = targets[(targets > 0) & (targets < total)]
        index = np.searchsorted(phase, targets, side="left") - 1
        index = np.clip(index, 0, n_steps - 1)
        rate = rates[i, index]
        valid = rate > 0
        times = index[valid] * step + (targets[valid] - phase[index[valid]]) / rate[valid]
        spikes.append(np.unique(times))
    return spikes


def voluntary_trial(
    units: Sequence[MotorUnit],
    target: float,
    duration: float,
    seed: int,
    config: Optional[ExperimentConfig] = None,
) -> TrialRecord:
    """
    Sustained voluntary contraction at a target fraction of MVC

    A common drive recruits units by ascending twitch peak and rate-codes them;
    an integral controller raises the drive as the units fatigue until it
    saturates, after which force declines.
    """
    config = config or ExperimentConfig()
    if not 0 < target < 1 + 1e-12:
        raise ParameterError("target must lie in (0, 1]", target=target)
    vc, fc = config.voluntary, config.force
    drive_model = VoluntaryDrive(units, vc)
    mvc_force = mvc(units)
    step = vc.control_step
    n_steps = int(math.ceil(duration / step))
    peaks, _, fatigue_rate, recovery_rate, phi = _unit_arrays(units)
    phi_min = np.array([u.phi_min for u in units])
    rate_max = np.array([u.rate_max for u in units])

    drive = drive_model.drive_for(target * mvc_force)
    rates = np.empty((len(units), n_steps))
    phi_history = np.empty((len(units), n_steps))
    drive_history = np.empty(n_steps)
    saturated_at = None
    for j in range(n_steps):
        drive_history[j] = drive
        rates[:, j] = drive_model.rates(drive)
        phi_history[:, j] = phi
        phi = _fatigue_step(phi, rates[:, j], fatigue_rate, recovery_rate, phi_min, rate_max, step)
        error = target - drive_model.expected_force(drive, phi) / mvc_force
        drive = min(max(drive + vc.controller_gain * error * drive_model.max_drive * step, 0.0), drive_model.max_drive)
        if saturated_at is None and drive >= drive_model.max_drive:
            saturated_at = (j + 1) * step

    rng = np.random.default_rng(seed)
    spike_times = _rate_coded_spikes(rates, step, vc.isi_cv, rng)
    spike_phi = []
    for i, times in enumerate(spike_times):
        idx = np.minimum((times / step).astype(np.int64), n_steps - 1)
        spike_phi.append(phi_history[i, idx])
    weights = [peaks[i] * phi for i, phi in enumerate(spike_phi)]
    contraction_times = np.array([u.contraction_time for u in units])
    n_samples = int(round(duration * fc.sample_rate))
    samples = superpose_twitches(spike_times, weights, contraction_times, n_samples, fc.sample_rate)

    spikes = SpikeTrainSet(times=spike_times, duration=duration)
    logger.info("Voluntary trial simulated", target=target, duration_s=duration,
                spikes=spikes.total_spikes, saturated_at_s=saturated_at)
    return TrialRecord(
        condition=Condition.VOL,
        target_level=target,
        duration=duration,
        stim_amplitude=None,
        spikes=spikes,
        force=ForceTrace(sample_rate=fc.sample_rate, samples=samples),
        mvc=mvc_force,
        seed=seed,
        spike_fatigue=spike_phi,
        extras={
            "drive": drive_history,
            "drive_step_s": step,
            "max_drive": drive_model.max_drive,
            "saturated_at_s": saturated_at,
            "recruitment_order": drive_model.order,
        },
    )
