"""
Analysis models - period sets, spatial RMS maps and per-trial metrics
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import ParameterError

INITIAL_PERIOD = (5.0, 15.0)


@dataclass(frozen=True)
class PeriodSet:
    """Ordered, non-overlapping analysis periods; the first is always 5-15 s"""

    periods: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if not self.periods or tuple(self.periods[0]) != INITIAL_PERIOD:
            raise ParameterError("the first period must be the initial 5-15 s period")
        previous_end = 0.0
        for start, end in self.periods:
            if not previous_end <= start < end:
                raise ParameterError("periods must be increasing and non-overlapping",
                                     period=[start, end])
            previous_end = end

    @classmethod
    def of(cls, periods: Sequence[Sequence[float]]) -> "PeriodSet":
        return cls(tuple((float(a), float(b)) for a, b in periods))

    @property
    def last(self) -> Tuple[float, float]:
        return self.periods[-1]

    def check_within(self, duration: float):
        if self.periods[-1][1] > duration + 1e-9:
            raise ParameterError("periods extend beyond the trial", duration=duration)

    def __iter__(self):
        return iter(self.periods)

    def __len__(self) -> int:
        return len(self.periods)


@dataclass
class SpatialRmsMap:
    """Per-electrode RMS (mV) and its upsampled spline surface"""

    base: np.ndarray
    interpolated: np.ndarray
    factor: int
    window: Tuple[float, float]

    @property
    def display(self) -> np.ndarray:
        """Interpolated surface clamped at zero for plotting"""
        return np.clip(self.interpolated, 0.0, None)


@dataclass
class TrialMetrics:
    """Force and EMG metrics of one trial"""

    condition: str
    level: float
    duration: float
    mvc: float
    stim_amplitude: Optional[float]
    periods: List[Tuple[float, float]]
    initial_force_pct: float
    period_force_pct: List[float]
    residual_pct: float
    period_rms: List[float] = field(default_factory=list)
    normalized_rms: List[float] = field(default_factory=list)
    rms_map: Optional[SpatialRmsMap] = None

    @property
    def key(self) -> str:
        return f"{self.condition}_{self.level:.2f}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "condition": self.condition,
            "level": self.level,
            "duration_s": self.duration,
            "mvc_N": self.mvc,
            "stim_amplitude_mA": self.stim_amplitude,
            "periods_s": [list(p) for p in self.periods],
            "initial_force_pct_mvc": self.initial_force_pct,
            "period_force_pct_mvc": list(self.period_force_pct),
            "residual_pct_mvc": self.residual_pct,
            "period_rms_mV": list(self.period_rms),
            "normalized_rms": list(self.normalized_rms),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrialMetrics":
        return cls(
            condition=data["condition"],
            level=float(data["level"]),
            duration=float(data["duration_s"]),
            mvc=float(data["mvc_N"]),
            stim_amplitude=data.get("stim_amplitude_mA"),
            periods=[tuple(p) for p in data["periods_s"]],
            initial_force_pct=float(data["initial_force_pct_mvc"]),
            period_force_pct=[float(x) for x in data["period_force_pct_mvc"]],
            residual_pct=float(data["residual_pct_mvc"]),
            period_rms=[float(x) for x in data.get("period_rms_mV", [])],
            normalized_rms=[float(x) for x in data.get("normalized_rms", [])],
        )
