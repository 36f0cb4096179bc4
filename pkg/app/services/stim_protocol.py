"""
Stimulation Protocol Service - LF and HF current waveform synthesis
Trains are sample-accurate rectangles on a high-rate grid
"""
import json
from fractions import Fraction
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from app.errors import ParameterError
from app.models.stimulation import ChargeBalance, HfParams, LfParams, StimParams, StimProtocol, StimTrain
from config.config import LevelConfig, StimConfig

logger = structlog.get_logger(__name__)

CHARGE_TOLERANCE = 1e-9


def _rate_ratio(sample_rate: float, frequency: float) -> Fraction:
    """Samples per stimulus period as an exact fraction"""
    return Fraction(sample_rate).limit_denominator(10**6) / Fraction(frequency).limit_denominator(10**6)


def _onsets(sample_rate: float, frequency: float, n_samples: int, block: int) -> np.ndarray:
    """Onsets round(k*sr/f) of every period whose block of `block` samples fits in the train"""
    ratio = _rate_ratio(sample_rate, frequency)
    num, den = ratio.numerator, ratio.denominator
    count = (n_samples * den) // num + 2
    k = np.arange(count, dtype=np.int64)
    onsets = (2 * k * num + den) // (2 * den)
    return onsets[onsets + block <= n_samples]


def _check_duration(duration: float, sample_rate: float) -> int:
    if duration <= 0:
        raise ParameterError("duration must be positive", duration=duration)
    if sample_rate <= 0:
        raise ParameterError("sample_rate must be positive", sample_rate=sample_rate)
    return int(round(duration * sample_rate))


def train_period_samples(sample_rate: float, frequency: float) -> int:
    """Exact repeat length (in samples) of a train's onset pattern"""
    return _rate_ratio(sample_rate, frequency).numerator


def synthesize_lf(params: LfParams, duration: float, sample_rate: float) -> StimTrain:
    """
    Build a train of biphasic rectangular pulses, one per period

    Args:
        params: LF waveform parameters
        duration: train length in seconds
        sample_rate: samples per second (>= 10 samples per phase)

    Returns:
        StimTrain with positive then negative phase at every period onset
    """
    n_samples = _check_duration(duration, sample_rate)
    phase_exact = params.pulse_width * sample_rate
    if phase_exact < 10 - 1e-9:
        raise ParameterError(
            "sample rate too low to represent the pulse phase",
            sample_rate=sample_rate,
            pulse_width=params.pulse_width,
            samples_per_phase=phase_exact,
        )
    phase = int(round(phase_exact))

    samples = np.zeros(n_samples, dtype=np.float64)
    onsets = _onsets(sample_rate, params.base_frequency, n_samples, 2 * phase)
    if params.amplitude > 0:
        for onset in onsets:
            samples[onset:onset + phase] = params.amplitude
            samples[onset + phase:onset + 2 * phase] = -params.amplitude

    logger.debug("LF train synthesized", pulses=len(onsets), samples=n_samples, amplitude_ma=params.amplitude)
    return StimTrain(sample_rate=sample_rate, samples=samples, params=params, duration=duration, onsets=onsets)


def hf_burst_template(params: HfParams, sample_rate: float) -> Tuple[np.ndarray, int]:
    """One burst: N positive carrier pulses followed by N negative ones"""
    carrier_exact = params.carrier_period * sample_rate
    carrier = int(round(carrier_exact))
    if carrier < 1 or abs(carrier_exact - carrier) > 1e-9 * max(1.0, carrier_exact):
        raise ParameterError(
            "sample rate must be an integer multiple of the carrier frequency",
            sample_rate=sample_rate,
            carrier_frequency=params.carrier_frequency,
        )
    width = int(round(params.pulse_width * sample_rate))
    if width < 1:
        raise ParameterError("pulse width shorter than one sample", pulse_width=params.pulse_width)

    n_pulses = params.pulses_per_half_burst
    carrier_shape = np.zeros(carrier)
    carrier_shape[:width] = params.amplitude
    template = np.concatenate([np.tile(carrier_shape, n_pulses), -np.tile(carrier_shape, n_pulses)])
    return template, n_pulses


def synthesize_hf(params: HfParams, duration: float, sample_rate: float) -> StimTrain:
    """
    Build a train of charge-balanced kilohertz bursts

    Args:
        params: HF waveform parameters
        duration: train length in seconds
        sample_rate: an integer multiple of the carrier frequency

    Returns:
        StimTrain with one burst per burst period, zero-padded at the burst end
    """
    n_samples = _check_duration(duration, sample_rate)
    template, n_pulses = hf_burst_template(params, sample_rate)

    samples = np.zeros(n_samples, dtype=np.float64)
    onsets = _onsets(sample_rate, params.burst_frequency, n_samples, len(template))
    if params.amplitude > 0:
        block = len(template)
        for onset in onsets:
            samples[onset:onset + block] = template

    logger.debug(
        "HF train synthesized",
        bursts=len(onsets),
        pulses_per_burst=2 * n_pulses,
        samples=n_samples,
        amplitude_ma=params.amplitude,
    )
    return StimTrain(sample_rate=sample_rate, samples=samples, params=params, duration=duration, onsets=onsets)


def synthesize(params: StimParams, duration: float, sample_rate: float) -> StimTrain:
    """Dispatch on the parameter type"""
    if isinstance(params, HfParams):
        return synthesize_hf(params, duration, sample_rate)
    return synthesize_lf(params, duration, sample_rate)


def verify_charge_balance(train: StimTrain) -> ChargeBalance:
    """Net and total injected charge, flagged when the net exceeds 1e-9 of the total"""
    net = float(np.sum(train.samples)) / train.sample_rate
    total = float(np.sum(np.abs(train.samples))) / train.sample_rate
    imbalanced = abs(net) > CHARGE_TOLERANCE * total
    if imbalanced:
        logger.warning("Charge imbalance detected", net_charge_mAs=net, total_charge_mAs=total)
    return ChargeBalance(net_charge=net, total_charge=total, imbalanced=imbalanced)


def measure_duty_cycle(train: StimTrain) -> float:
    """Fraction of samples carrying nonzero current"""
    if len(train.samples) == 0:
        raise ParameterError("train is empty")
    return float(np.count_nonzero(train.samples)) / len(train.samples)


def params_from_config(protocol: StimProtocol, amplitude: float, config: Optional[StimConfig] = None) -> StimParams:
    """Waveform parameters for a protocol at the given amplitude"""
    config = config or StimConfig()
    if protocol is StimProtocol.HF:
        return HfParams(
            amplitude=amplitude,
            burst_frequency=config.hf_burst_frequency,
            pulse_width=config.hf_pulse_width,
            pulse_interval=config.hf_pulse_interval,
        )
    return LfParams(amplitude=amplitude, base_frequency=config.lf_base_frequency, pulse_width=config.lf_pulse_width)


def default_amplitude(protocol: StimProtocol, level: LevelConfig) -> float:
    """Starting amplitude (mA) for a protocol at a force level"""
    return level.hf_amplitude if protocol is StimProtocol.HF else level.lf_amplitude


def export_stim_excerpt(train: StimTrain, path: Union[str, Path], seconds: float = 0.1) -> Tuple[Path, Path]:
    """
    Write the leading part of a train as CSV plus a JSON sidecar of its parameters

    Returns:
        (csv path, sidecar path)
    """
    if seconds <= 0:
        raise ParameterError("excerpt length must be positive", seconds=seconds)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = min(len(train.samples), int(round(seconds * train.sample_rate)))
    frame = pd.DataFrame({
        "time_s": np.arange(count) / train.sample_rate,
        "current_mA": train.samples[:count],
    })
    frame.to_csv(path, index=False, float_format="%.9g")
    sidecar = path.with_suffix(".json")
    meta = train.metadata()
    meta["excerpt_seconds"] = count / train.sample_rate
    sidecar.write_text(json.dumps(meta, sort_keys=True, indent=2), encoding="utf-8")
    return path, sidecar


def onset_times(params: StimParams, duration: float, sample_rate: float) -> np.ndarray:
    """Pulse or burst onset times of a train without synthesizing its samples"""
    n_samples = _check_duration(duration, sample_rate)
    if isinstance(params, HfParams):
        block = len(hf_burst_template(params, sample_rate)[0])
    else:
        block = 2 * int(round(params.pulse_width * sample_rate))
    return _onsets(sample_rate, params.frequency, n_samples, block) / sample_rate
