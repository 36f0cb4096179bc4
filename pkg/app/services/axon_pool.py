"""
Axon Pool Service - population construction and stimulation response
Leaky integrate-and-fire axons driven by the rectified stimulation current
"""
import math
from typing import Dict, List, Optional, Tuple

import numpy as np
import structlog
from scipy.signal import lfilter

from app.errors import EmptySpikeSetError, ParameterError
from app.models.axon import Axon, AxonPool, DiameterDistribution, SpikeTrainSet
from app.models.stimulation import HfParams, StimParams, StimTrain
from app.services.stim_protocol import synthesize, train_period_samples
from config.config import PoolConfig

logger = structlog.get_logger(__name__)

_FIRST_CHUNK = 256
_MAX_CHUNK = 1 << 16


def build_pool(
    n: int,
    distribution: DiameterDistribution,
    seed: int,
    config: Optional[PoolConfig] = None,
) -> AxonPool:
    """
    Draw a reproducible axon population

    Args:
        n: number of axons (>= 1)
        distribution: diameter range and skew exponent (0 gives uniform)
        seed: generator seed
        config: membrane constants; defaults when omitted

    Returns:
        AxonPool sorted by descending diameter
    """
    config = config or PoolConfig()
    if n < 1:
        raise ParameterError("pool needs at least one axon", n=n)
    if not 0 < distribution.min_um < distribution.max_um:
        raise ParameterError(
            "diameter range must satisfy 0 < min < max",
            min_um=distribution.min_um,
            max_um=distribution.max_um,
        )

    rng = np.random.default_rng(seed)
    u = rng.random(n)
    span = distribution.max_um - distribution.min_um
    diameters = np.sort(distribution.min_um + span * u ** (1.0 + distribution.exponent))[::-1]
    thresholds = np.full(n, config.threshold)
    if config.threshold_jitter > 0:
        thresholds = config.threshold * np.maximum(0.05, 1.0 + config.threshold_jitter * rng.standard_normal(n))

    axons = [
        Axon(
            id=i,
            diameter=float(d),
            gain=float(config.gain_scale * d / distribution.max_um),
            tau_m=config.tau_m,
            threshold=float(thresholds[i]),
            refractory=config.refractory,
        )
        for i, d in enumerate(diameters)
    ]
    logger.info("Axon pool built", n_axons=n, seed=seed, largest_um=float(diameters[0]), smallest_um=float(diameters[-1]))
    return AxonPool(
        axons=axons,
        seed=seed,
        distribution=distribution,
        anodic_efficacy=config.anodic_efficacy,
        refractory_jitter=config.refractory_jitter,
    )


def pool_from_config(config: PoolConfig, seed: int) -> AxonPool:
    distribution = DiameterDistribution(config.diameter_min_um, config.diameter_max_um, config.diameter_exponent)
    return build_pool(config.n_axons, distribution, seed, config)


def rectify(current: np.ndarray, anodic_efficacy: float) -> np.ndarray:
    """Depolarizing drive: cathodic part plus a fraction of the anodic part"""
    drive = np.maximum(current, 0.0)
    if anodic_efficacy > 0:
        drive = drive + anodic_efficacy * np.maximum(-current, 0.0)
    return drive


def _step_stride(train: StimTrain, dt: float) -> int:
    ratio = dt * train.sample_rate
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-6:
        raise ParameterError("dt must be an integer multiple of the train sample period", dt=dt, sample_rate=train.sample_rate)
    if dt > train.params.narrowest_pulse / 4 * (1 + 1e-9):
        raise ParameterError("dt must not exceed a quarter of the pulse width", dt=dt, pulse_width=train.params.narrowest_pulse)
    return stride


def _integrated_drive(drive: np.ndarray, dt: float, tau: float) -> np.ndarray:
    """Unit-gain membrane trajectory from rest, Y_k = a*Y_{k-1} + x_k*dt"""
    alpha = math.exp(-dt / tau) if math.isfinite(tau) else 1.0
    return lfilter([dt], [1.0, -alpha], drive)


def _scan_axon(
    y: np.ndarray,
    axon: Axon,
    dt: float,
    refractory_steps,
) -> List[int]:
    """
    Step indices at which one axon crosses threshold

    A crossing at step h holds the membrane at 0 through the refractory period, so
    drive delivered then is lost and integration restarts from rest at
    s = h + 1 + refractory steps. From there the trajectory is
    V_k = gain * (Y_k - a^(k-s+1) * Y_(s-1)), so crossings are searched chunk-wise
    without stepping the recursion in Python.
    """
    n_steps = len(y)
    rate = dt / axon.tau_m if math.isfinite(axon.tau_m) else 0.0
    spikes: List[int] = []
    start = 0
    while start < n_steps:
        base = y[start - 1] if start > 0 else 0.0
        pos, chunk, hit_at = start, _FIRST_CHUNK, -1
        while pos < n_steps:
            end = min(n_steps, pos + chunk)
            lag = np.arange(pos - start + 1, end - start + 1, dtype=np.float64)
            v = axon.gain * (y[pos:end] - np.exp(-lag * rate) * base)
            hits = np.flatnonzero(v >= axon.threshold)
            if hits.size:
                hit_at = pos + int(hits[0])
                break
            pos, chunk = end, min(chunk * 2, _MAX_CHUNK)
        if hit_at < 0:
            break
        spikes.append(hit_at)
        start = hit_at + 1 + refractory_steps()
    return spikes


def simulate_pool_steps(pool: AxonPool, train: StimTrain, dt: float, seed: Optional[int] = None) -> Tuple[List[np.ndarray], int]:
    """Spike step indices per axon on the dt grid, plus the step stride"""
    stride = _step_stride(train, dt)
    if not pool.at_rest:
        raise ParameterError("pool must be at rest before simulation")
    drive = rectify(train.samples[::stride], pool.anodic_efficacy)
    rng = np.random.default_rng(seed if seed is not None else pool.seed)

    cache: Dict[float, np.ndarray] = {}
    steps: List[np.ndarray] = []
    for axon in pool.axons:
        y = cache.get(axon.tau_m)
        if y is None:
            y = cache[axon.tau_m] = _integrated_drive(drive, dt, axon.tau_m)
        # V_k <= gain * Y_k from rest, so a silent axon is known up front
        if y.size == 0 or axon.gain * float(y.max()) < axon.threshold:
            steps.append(np.zeros(0, dtype=np.int64))
            continue
        nominal = int(math.ceil(axon.refractory / dt - 1e-9))
        if pool.refractory_jitter > 0:
            def refractory_steps(axon=axon):
                drawn = rng.normal(axon.refractory, axon.refractory * pool.refractory_jitter)
                return int(math.ceil(max(axon.refractory * 0.5, drawn) / dt - 1e-9))
        else:
            def refractory_steps(nominal=nominal):
                return nominal
        steps.append(np.asarray(_scan_axon(y, axon, dt, refractory_steps), dtype=np.int64))
    return steps, stride


def simulate_pool(pool: AxonPool, train: StimTrain, dt: float, seed: Optional[int] = None) -> SpikeTrainSet:
    """
    Simulate every axon of a resting pool against one train

    Args:
        pool: population at rest
        train: stimulation current
        dt: integration step, an integer multiple of the train sample period and <= pulse_width/4
        seed: refractory jitter seed (only used when jitter is enabled)

    Returns:
        SpikeTrainSet with spike times k*dt
    """
    steps, _ = simulate_pool_steps(pool, train, dt, seed)
    spikes = SpikeTrainSet(
        times=[s.astype(np.float64) * dt for s in steps],
        duration=train.duration,
        refractory=np.array([a.refractory for a in pool.axons]),
    )
    logger.debug("Pool simulated", protocol=train.protocol_tag, spikes=spikes.total_spikes, recruited=len(spikes.recruited()))
    return spikes


def extend_periodic(
    steps: np.ndarray,
    window_steps: int,
    cycle_steps: int,
    total_steps: int,
    max_cycles: int = 5,
    refractory_steps: int = 0,
) -> Tuple[np.ndarray, bool]:
    """
    Continue a spike pattern whose drive repeats every `cycle_steps`

    The smallest multiple p of the cycle under which the second half of the
    window is p-periodic is tiled to `total_steps`.
    Without such a repeat the last half-window of whole cycles is tiled and
    spikes closer than `refractory_steps` at the seams are dropped.

    Returns:
        (steps over the whole duration, whether an exact repeat was found)
    """
    steps = np.asarray(steps, dtype=np.int64)
    if total_steps <= window_steps:
        return steps[steps < total_steps], True

    found = False
    for p in range(1, max_cycles + 1):
        period = p * cycle_steps
        if 2 * period > window_steps:
            break
        # the shift by one period must hold over the whole second half of the window
        start = window_steps - max(2 * period, (window_steps // 2) // period * period)
        tail = steps[steps >= start]
        if np.array_equal(tail[tail >= start + period] - period, tail[tail < window_steps - period]):
            found = True
            break
    if not found:
        # longest whole number of cycles in the second half of the window
        period = max(cycle_steps, (window_steps // 2) // cycle_steps * cycle_steps)

    offsets = steps[steps >= window_steps - period] - (window_steps - period)
    repeats = int(math.ceil((total_steps - window_steps) / period))
    tiled = (window_steps + np.arange(repeats, dtype=np.int64)[:, None] * period + offsets[None, :]).ravel()
    merged = np.concatenate([steps, tiled[tiled < total_steps]])
    if not found and merged.size > 1:
        keep = np.ones(merged.size, dtype=bool)
        last_kept = merged[0]
        for i in range(1, merged.size):
            if merged[i] - last_kept <= refractory_steps:
                keep[i] = False
            else:
                last_kept = merged[i]
        merged = merged[keep]
    return merged, found


def simulate_protocol(
    pool: AxonPool,
    params: StimParams,
    duration: float,
    sample_rate: float,
    dt: float,
    settle_window: float = 2.0,
    max_cycle_periods: int = 10,
    seed: Optional[int] = None,
) -> SpikeTrainSet:
    """
    Spike trains for a whole trial of a periodic protocol

    A settling window spanning whole repeat cycles of the train is simulated
    exactly; each axon's repeating spike cycle is then tiled to the trial end.
    """
    period_samples = train_period_samples(sample_rate, params.frequency)
    stride = int(round(dt * sample_rate))
    if stride < 1:
        raise ParameterError("dt shorter than one train sample", dt=dt, sample_rate=sample_rate)
    cycle_samples = period_samples * stride // math.gcd(period_samples, stride)
    cycle_steps = cycle_samples // stride
    total_samples = int(round(duration * sample_rate))
    total_steps = (total_samples + stride - 1) // stride

    cycles = max(2 * max_cycle_periods, int(math.ceil(settle_window * sample_rate / cycle_samples)))
    window_samples = cycles * cycle_samples
    if window_samples >= total_samples:
        train = synthesize(params, duration, sample_rate)
        return simulate_pool(pool, train, dt, seed)

    window_train = synthesize(params, window_samples / sample_rate, sample_rate)
    steps, _ = simulate_pool_steps(pool, window_train, dt, seed)
    window_steps = window_samples // stride

    extended, fallbacks = [], 0
    for axon, axon_steps in zip(pool.axons, steps):
        ref = int(math.ceil(axon.refractory / dt - 1e-9))
        full, exact = extend_periodic(axon_steps, window_steps, cycle_steps, total_steps, max_cycle_periods, ref)
        fallbacks += 0 if exact else 1
        extended.append(full.astype(np.float64) * dt)
    if fallbacks:
        logger.warning("No exact spike cycle found, last half-window tiled", axons=fallbacks, protocol=params.protocol.value)

    spikes = SpikeTrainSet(times=extended, duration=duration, refractory=np.array([a.refractory for a in pool.axons]))
    logger.info(
        "Protocol simulated",
        protocol=params.protocol.value,
        amplitude_ma=params.amplitude,
        duration_s=duration,
        spikes=spikes.total_spikes,
        recruited=len(spikes.recruited()),
    )
    return spikes


def pulses_to_first_spike(axon: Axon, params: HfParams, amplitude: float, dt: float = 20e-6,
                          anodic_efficacy: float = 0.0, max_bursts: int = 10_000) -> Optional[int]:
    """
    Number of depolarizing carrier pulses before the first threshold crossing

    Uses the same discrete integrator as the pool simulation. Returns None when
    the burst-periodic steady state never reaches threshold.
    """
    if amplitude <= 0:
        return None
    width = int(round(params.pulse_width / dt))
    gap = int(round(params.carrier_period / dt)) - width
    if width < 1:
        raise ParameterError("dt longer than the pulse width", dt=dt, pulse_width=params.pulse_width)
    alpha = math.exp(-dt / axon.tau_m) if math.isfinite(axon.tau_m) else 1.0
    n_pulses = params.pulses_per_half_burst
    burst_period = 1.0 / params.burst_frequency
    silent_steps = int(round(burst_period / dt)) - 2 * n_pulses * (width + gap)

    def pulse(v: float, current: float) -> float:
        gain = axon.gain * current * dt
        if alpha == 1.0:
            return v + gain * width
        return alpha ** width * v + gain * (1 - alpha ** width) / (1 - alpha)

    v = axon.membrane_v
    count = 0
    for _ in range(max_bursts):
        burst_start = v
        for current in (amplitude, anodic_efficacy * amplitude):
            if current <= 0:
                v *= alpha ** (n_pulses * (width + gap))
                continue
            for _ in range(n_pulses):
                v = pulse(v, current)
                count += 1
                if v >= axon.threshold:
                    return count
                v *= alpha ** gap
        v *= alpha ** max(silent_steps, 0)
        if alpha < 1.0 and abs(v - burst_start) <= 1e-12 * max(1.0, abs(v)):
            return None
    return None


def vector_strength(spikes: SpikeTrainSet, lock_frequency: float) -> float:
    """Phase locking of all pooled spikes to the stimulus frequency"""
    times = spikes.pooled()
    if times.size == 0:
        raise EmptySpikeSetError("vector strength is undefined for an empty spike set")
    phases = 2.0 * np.pi * lock_frequency * times
    return float(np.abs(np.mean(np.exp(1j * phases))))


def recruitment_fraction(spikes: SpikeTrainSet) -> float:
    """Fraction of axons that fired at least once"""
    if spikes.n_axons == 0:
        return 0.0
    return len(spikes.recruited()) / spikes.n_axons


def firing_rates(spikes: SpikeTrainSet, start: float, end: float) -> np.ndarray:
    """Per-axon mean rate (Hz) over [start, end)"""
    if end <= start:
        raise ParameterError("rate window must have positive length", start=start, end=end)
    return np.array([np.count_nonzero((t >= start) & (t < end)) for t in spikes.times]) / (end - start)
