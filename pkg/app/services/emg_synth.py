"""
EMG Synthesis Service - grid sEMG from spike trains and stimulation artifacts
MUAP superposition, band-limited acquisition noise, LF/HF artifact injection
"""
from typing import Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.signal import butter, sosfiltfilt

from app.errors import ParameterError
from app.models.axon import SpikeTrainSet
from app.models.emg import ArtifactGroundTruth, EmgGridRecord, MuapTemplate, RecordLabel, SpatialPolicy
from app.models.muscle import MotorUnit
from config.config import ArtifactConfig, EmgConfig

logger = structlog.get_logger(__name__)

# Sharp biphasic transient, about 2 ms at 2048 Hz, peak at the event sample
LF_ARTIFACT_KERNEL = np.array([1.0, -0.65, -0.3, -0.05])

_CHUNK = 1 << 16


def make_templates(
    units: Sequence[MotorUnit],
    seed: int,
    policy: SpatialPolicy = SpatialPolicy.DISPERSED,
    config: Optional[EmgConfig] = None,
) -> list:
    """
    One MUAP template per motor unit

    Args:
        units: motor units (larger twitch peak gives larger, wider MUAPs)
        seed: generator seed; the same draws are used for both policies
        policy: FOCAL puts larger units near the grid centre, DISPERSED spreads all units
        config: grid geometry and waveform ranges

    Returns:
        list of MuapTemplate, index-aligned with units
    """
    config = config or EmgConfig()
    if not units:
        raise ParameterError("templates need at least one motor unit")
    rng = np.random.default_rng(seed)
    n = len(units)
    peaks = np.array([u.twitch_peak for u in units])
    rank = np.argsort(np.argsort(peaks, kind="stable"), kind="stable")
    position = rank / (n - 1) if n > 1 else np.ones(n)

    uniform_rc = rng.random((n, 2))
    angles = rng.random(n) * 2.0 * np.pi
    spread = rng.random(n)
    durations = config.muap_duration_min + (config.muap_duration_max - config.muap_duration_min) * rng.random(n)
    mixing = 0.5 * rng.random(n)

    half_rows, half_cols = (config.rows - 1) / 2.0, (config.cols - 1) / 2.0
    templates = []
    for i in range(n):
        if policy is SpatialPolicy.FOCAL:
            radius = 0.9 * (1.0 - position[i]) * np.sqrt(spread[i])
            center = (half_rows + radius * half_rows * np.sin(angles[i]),
                      half_cols + radius * half_cols * np.cos(angles[i]))
        else:
            center = (uniform_rc[i, 0] * (config.rows - 1), uniform_rc[i, 1] * (config.cols - 1))

        length = max(5, int(round(durations[i] * config.sample_rate)))
        width = durations[i] / 6.0
        t = (np.arange(length) - (length - 1) / 2.0) / config.sample_rate / width
        biphasic = t * np.exp(-t ** 2)
        triphasic = (1.0 - 2.0 * t ** 2) * np.exp(-t ** 2)
        waveform = mixing[i] * biphasic / np.max(np.abs(biphasic)) + (1.0 - mixing[i]) * triphasic
        waveform = waveform / np.max(np.abs(waveform))
        waveform = waveform - waveform.mean()

        templates.append(
            MuapTemplate(
                unit_id=units[i].id,
                center=(float(center[0]), float(center[1])),
                spatial_decay=float(config.spatial_decay_min_mm
                                    + (config.spatial_decay_max_mm - config.spatial_decay_min_mm) * position[i]),
                waveform=waveform,
                amplitude=float(config.muap_amplitude_mv * np.sqrt(peaks[i] / peaks.max())),
            )
        )
    return templates


def band_limited_noise(n_channels: int, n_samples: int, noise_rms: float, seed: int,
                       config: Optional[EmgConfig] = None) -> np.ndarray:
    """White noise through the zero-phase acquisition band-pass, scaled to the requested RMS"""
    config = config or EmgConfig()
    noise = np.zeros((n_channels, n_samples), dtype=np.float32)
    if noise_rms <= 0 or n_samples == 0:
        return noise
    sos = butter(config.filter_order, [config.band_low_hz, config.band_high_hz],
                 btype="bandpass", fs=config.sample_rate, output="sos")
    rng = np.random.default_rng(seed)
    for c in range(n_channels):
        filtered = sosfiltfilt(sos, rng.standard_normal(n_samples))
        rms = np.sqrt(np.mean(filtered ** 2))
        noise[c] = filtered * (noise_rms / rms if rms > 0 else 0.0)
    return noise


def synthesize_emg(
    spikes: SpikeTrainSet,
    templates: Sequence[MuapTemplate],
    duration: float,
    noise_rms: float,
    seed: int,
    config: Optional[EmgConfig] = None,
    label: RecordLabel = RecordLabel.CLEAN,
    spike_gains: Optional[Sequence[np.ndarray]] = None,
) -> EmgGridRecord:
    """
    Clean grid EMG: every spike places its unit's MUAP on every channel

    Args:
        spikes: per-unit spike times, index-aligned with templates
        templates: MUAP templates
        duration: record length in seconds
        noise_rms: acquisition noise RMS in millivolts (0 disables noise)
        seed: noise seed
        config: grid geometry and acquisition band
        label: record label
        spike_gains: per-spike MUAP scale, index-aligned with spikes.times (1 when omitted)

    Returns:
        EmgGridRecord with float32 channels
    """
    config = config or EmgConfig()
    if spikes.n_axons != len(templates):
        raise ParameterError("spike trains and templates are not index-aligned",
                             spike_trains=spikes.n_axons, templates=len(templates))
    if spike_gains is not None and [len(g) for g in spike_gains] != [len(t) for t in spikes.times]:
        raise ParameterError("spike gains are not index-aligned with the spike trains")
    fs = config.sample_rate
    n_samples = int(round(duration * fs))
    n_channels = config.rows * config.cols
    channels = band_limited_noise(n_channels, n_samples, noise_rms, seed, config)

    active = [i for i, t in enumerate(spikes.times) if len(t)]
    if active:
        mixing = np.stack([
            templates[i].amplitude * templates[i].channel_weights(config.rows, config.cols, config.pitch_mm)
            for i in active
        ], axis=1)
        indices = [np.rint(np.asarray(spikes.times[i]) * fs).astype(np.int64) for i in active]
        gains = [np.ones(len(idx)) if spike_gains is None else np.asarray(spike_gains[i], dtype=np.float64)
                 for i, idx in zip(active, indices)]
        longest = max(len(templates[i].waveform) for i in active)
        for start in range(0, n_samples, _CHUNK):
            stop = min(n_samples, start + _CHUNK)
            origin = start - longest + 1
            traces = np.zeros((len(active), stop - start))
            for row, i in enumerate(active):
                inside = (indices[row] >= origin) & (indices[row] < stop)
                if not inside.any():
                    continue
                impulses = np.zeros(stop - origin)
                np.add.at(impulses, indices[row][inside] - origin, gains[row][inside])
                traces[row] = np.convolve(impulses, templates[i].waveform)[longest - 1:longest - 1 + stop - start]
            channels[:, start:stop] += (mixing @ traces).astype(np.float32)

    logger.debug("EMG synthesized", samples=n_samples, active_units=len(active), noise_rms_mv=noise_rms)
    return EmgGridRecord(sample_rate=fs, channels=channels, rows=config.rows, cols=config.cols, label=label)


def make_baseline(duration: float, noise_rms: float, seed: int, config: Optional[EmgConfig] = None) -> EmgGridRecord:
    """Rest-state recording: acquisition noise only"""
    config = config or EmgConfig()
    n_samples = int(round(duration * config.sample_rate))
    channels = band_limited_noise(config.rows * config.cols, n_samples, noise_rms, seed, config)
    return EmgGridRecord(config.sample_rate, channels, config.rows, config.cols, RecordLabel.CLEAN)


def _channel_rms(emg: EmgGridRecord) -> np.ndarray:
    data = emg.channels.astype(np.float64)
    return np.sqrt(np.mean(data ** 2, axis=1)) if emg.length else np.zeros(emg.n_channels)


def inject_lf_artifact(
    emg: EmgGridRecord,
    stim_times: np.ndarray,
    magnitude_ratio: float,
    seed: int,
    jitter: float = 0.5e-3,
    amplitude_jitter: float = 0.05,
) -> Tuple[EmgGridRecord, ArtifactGroundTruth]:
    """
    Add a sharp biphasic transient at every stimulus

    Peak height is magnitude_ratio times each channel's clean RMS; event times
    carry uniform jitter of up to `jitter` seconds.
    """
    if magnitude_ratio < 10:
        raise ParameterError("magnitude_ratio must be at least 10", magnitude_ratio=magnitude_ratio)
    stim_times = np.asarray(stim_times, dtype=np.float64)
    if stim_times.size and (stim_times.min() < 0 or stim_times.max() >= emg.duration):
        raise ParameterError("stimulus times must lie within the record")
    rng = np.random.default_rng(seed)
    shifts = rng.uniform(-jitter, jitter, stim_times.size) if jitter > 0 else np.zeros(stim_times.size)
    gains = 1.0 + amplitude_jitter * rng.uniform(-1.0, 1.0, stim_times.size)

    event_samples = np.rint((stim_times + shifts) * emg.sample_rate).astype(np.int64)
    inside = (event_samples >= 0) & (event_samples < emg.length)
    event_samples, gains = event_samples[inside], gains[inside]

    envelope = np.zeros(emg.length)
    for k, value in enumerate(LF_ARTIFACT_KERNEL):
        pos = event_samples + k
        ok = pos < emg.length
        np.add.at(envelope, pos[ok], value * gains[ok])

    artifact = (magnitude_ratio * _channel_rms(emg))[:, None] * envelope[None, :]
    artifact = artifact.astype(np.float32)
    contaminated = emg.with_channels(emg.channels + artifact, RecordLabel.LF_CONTAMINATED)
    logger.debug("LF artifact injected", events=len(event_samples), ratio=magnitude_ratio)
    return contaminated, ArtifactGroundTruth(artifact=artifact, event_times=event_samples / emg.sample_rate)


def _burst_envelope_harmonics(half_burst_fraction: float, harmonics: int) -> np.ndarray:
    """Complex Fourier coefficients of the +1/-1 burst envelope over one burst period"""
    m = np.arange(1, harmonics + 1)
    theta = 2.0 * np.pi * m * half_burst_fraction
    return (1.0 - np.exp(-1j * theta)) ** 2 / (1j * 2.0 * np.pi * m)


DRIFT_RAMP_S = 40.0


def drift_profile(t: np.ndarray) -> np.ndarray:
    """Triangle wave between 0 and 1 rising over 40 s, so any 4 s window moves it by at most 0.1"""
    return 1.0 - np.abs(np.mod(t / DRIFT_RAMP_S, 2.0) - 1.0)


def inject_hf_artifact(
    emg: EmgGridRecord,
    burst_schedule: np.ndarray,
    magnitude_ratio: float,
    amp_drift: float,
    time_drift: float,
    seed: int,
    burst_frequency: float = 30.0,
    half_burst_fraction: float = 0.498,
    config: Optional[ArtifactConfig] = None,
) -> Tuple[EmgGridRecord, ArtifactGroundTruth]:
    """
    Add the recorded image of the kilohertz bursts

    The artifact is a burst-periodic waveform (band-limited envelope harmonics plus
    the folded carrier) whose amplitude and timing wander by up to `amp_drift`
    (relative) and `time_drift` (seconds). Within any 4 s block the wander is at
    most a tenth of those values.
    """
    config = config or ArtifactConfig()
    if magnitude_ratio < 10:
        raise ParameterError("magnitude_ratio must be at least 10", magnitude_ratio=magnitude_ratio)
    schedule = np.asarray(burst_schedule, dtype=np.float64)
    if schedule.size == 0:
        raise ParameterError("burst schedule is empty")
    if schedule.size > 1 and np.max(np.abs(np.diff(schedule) - 1.0 / burst_frequency)) > 1e-4:
        raise ParameterError("burst schedule is not periodic at the burst frequency", burst_frequency=burst_frequency)

    rng = np.random.default_rng(seed)
    coefficients = _burst_envelope_harmonics(half_burst_fraction, config.hf_harmonics)
    alias_phase = rng.uniform(0.0, 2.0 * np.pi, emg.n_channels)
    shape_gain = rng.uniform(0.8, 1.2, emg.n_channels)

    n = np.arange(emg.length, dtype=np.float64)
    t = n / emg.sample_rate
    profile = drift_profile(t)
    cycles = n * burst_frequency / emg.sample_rate - (time_drift * profile + schedule[0]) * burst_frequency
    phase = np.mod(cycles, 1.0)
    amplitude = 1.0 + amp_drift * profile
    active = t >= schedule[0]

    harmonic = np.arange(1, config.hf_harmonics + 1)
    envelope = np.zeros(emg.length)
    for m, c in zip(harmonic, coefficients):
        envelope += 2.0 * np.real(c * np.exp(1j * 2.0 * np.pi * m * phase))

    fine = np.linspace(0.0, 1.0, 4096, endpoint=False)
    fine_envelope = sum(2.0 * np.real(c * np.exp(1j * 2.0 * np.pi * m * fine)) for m, c in zip(harmonic, coefficients))

    rms = _channel_rms(emg)
    artifact = np.zeros(emg.channels.shape, dtype=np.float32)
    for ch in range(emg.n_channels):
        alias = config.hf_alias_weight * np.cos(2.0 * np.pi * config.hf_alias_harmonic * phase + alias_phase[ch])
        shape = shape_gain[ch] * envelope + alias
        fine_shape = shape_gain[ch] * fine_envelope + config.hf_alias_weight * np.cos(
            2.0 * np.pi * config.hf_alias_harmonic * fine + alias_phase[ch])
        scale = magnitude_ratio * rms[ch] / np.max(np.abs(fine_shape))
        artifact[ch] = np.where(active, scale * amplitude * shape, 0.0)

    contaminated = emg.with_channels(emg.channels + artifact, RecordLabel.HF_CONTAMINATED)
    logger.debug("HF artifact injected", bursts=int(schedule.size), ratio=magnitude_ratio,
                 amp_drift=amp_drift, time_drift_s=time_drift)
    return contaminated, ArtifactGroundTruth(artifact=artifact, event_times=schedule)
