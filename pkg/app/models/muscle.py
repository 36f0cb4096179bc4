"""
Muscle models - motor units, force traces and trial records
"""
import enum
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .axon import SpikeTrainSet


class Condition(enum.Enum):
    """Force generation strategies"""
    VOL = "Vol"
    HF = "HF"
    LF = "LF"

    @property
    def is_stimulation(self) -> bool:
        return self is not Condition.VOL


@dataclass(frozen=True)
class MotorUnit:
    """A motor axon's muscle fibres: twitch shape plus fatigue state"""

    id: int
    axon_id: int
    twitch_peak: float
    contraction_time: float
    fatigue_rate: float
    recovery_rate: float
    fatigue_factor: float = 1.0
    phi_min: float = 0.2
    rate_max: float = 40.0

    @property
    def tetanic_force(self) -> float:
        """Mean force when firing at rate_max with no fatigue"""
        return self.twitch_peak * self.rate_max * np.e * self.contraction_time


@dataclass
class ForceTrace:
    """Force in newtons sampled at a fixed rate"""

    sample_rate: float
    samples: np.ndarray

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) / self.sample_rate

    def window_mean(self, start: float, end: float) -> float:
        lo = int(round(start * self.sample_rate))
        hi = int(round(end * self.sample_rate))
        return float(np.mean(self.samples[lo:hi]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"time_s": self.times, "force_N": self.samples})


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of an amplitude bisection"""

    amplitude: float
    achieved_fraction: float
    target: float
    evaluations: int
    history: List[Dict[str, float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "amplitude_mA": self.amplitude,
            "achieved_fraction": self.achieved_fraction,
            "target": self.target,
            "evaluations": self.evaluations,
        }


@dataclass
class TrialRecord:
    """One simulated trial"""

    condition: Condition
    target_level: float
    duration: float
    stim_amplitude: Optional[float]
    spikes: SpikeTrainSet
    force: ForceTrace
    mvc: float
    seed: int
    emg: Optional[Any] = None
    clean_emg: Optional[Any] = None
    artifact: Optional[Any] = None
    calibration: Optional[CalibrationResult] = None
    raw_emg: Optional[Any] = None
    extras: Dict[str, Any] = field(default_factory=dict)
    # fatigue factor at each spike, index-aligned with spikes.times
    spike_fatigue: Optional[List[np.ndarray]] = None

    @property
    def key(self) -> str:
        return f"{self.condition.value}_{self.target_level:.2f}"

    def initial_force_fraction(self, window=(5.0, 15.0)) -> float:
        return self.force.window_mean(*window) / self.mvc
