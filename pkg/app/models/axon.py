"""
Axon models - motor axon population and per-axon spike trains
"""
import copy
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd


@dataclass
class Axon:
    """One motor axon modelled as a leaky integrator with hard threshold"""

    id: int
    diameter: float
    gain: float
    tau_m: float
    threshold: float
    refractory: float
    membrane_v: float = 0.0

    @property
    def at_rest(self) -> bool:
        return self.membrane_v == 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "diameter_um": self.diameter,
            "gain": self.gain,
            "tau_m_s": self.tau_m,
            "threshold": self.threshold,
            "refractory_s": self.refractory,
        }


@dataclass(frozen=True)
class DiameterDistribution:
    """Power-law-skewed diameter range: many small axons, few large"""

    min_um: float = 5.0
    max_um: float = 20.0
    exponent: float = 1.0


@dataclass
class AxonPool:
    """Axons ordered by descending diameter"""

    axons: List[Axon]
    seed: int
    distribution: DiameterDistribution
    anodic_efficacy: float = 0.0
    refractory_jitter: float = 0.0

    def __len__(self) -> int:
        return len(self.axons)

    @property
    def diameters(self) -> np.ndarray:
        return np.array([a.diameter for a in self.axons])

    @property
    def gains(self) -> np.ndarray:
        return np.array([a.gain for a in self.axons])

    @property
    def at_rest(self) -> bool:
        return all(a.at_rest for a in self.axons)

    def reset(self) -> None:
        """Return every membrane to rest"""
        for axon in self.axons:
            axon.membrane_v = 0.0

    def fresh_copy(self) -> "AxonPool":
        pool = copy.deepcopy(self)
        pool.reset()
        return pool


@dataclass
class SpikeTrainSet:
    """Per-axon ordered spike times in seconds"""

    times: List[np.ndarray]
    duration: Optional[float] = None
    refractory: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_axons(self) -> int:
        return len(self.times)

    @property
    def total_spikes(self) -> int:
        return int(sum(len(t) for t in self.times))

    @property
    def is_empty(self) -> bool:
        return self.total_spikes == 0

    def pooled(self) -> np.ndarray:
        """All spike times of all axons, sorted"""
        if not self.times:
            return np.zeros(0)
        return np.sort(np.concatenate(self.times))

    def counts(self) -> np.ndarray:
        return np.array([len(t) for t in self.times], dtype=np.int64)

    def recruited(self) -> np.ndarray:
        """Indices of axons that fired at least once"""
        return np.flatnonzero(self.counts() > 0)

    def to_frame(self) -> pd.DataFrame:
        ids = np.concatenate([np.full(len(t), i, dtype=np.int64) for i, t in enumerate(self.times)]) \
            if self.times else np.zeros(0, dtype=np.int64)
        spike_times = np.concatenate(self.times) if self.times else np.zeros(0)
        return pd.DataFrame({"axon_id": ids, "spike_time_s": spike_times})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, n_axons: int, duration: Optional[float] = None) -> "SpikeTrainSet":
        times = [np.zeros(0) for _ in range(n_axons)]
        for axon_id, group in frame.groupby("axon_id", sort=True):
            times[int(axon_id)] = np.sort(group["spike_time_s"].to_numpy(dtype=np.float64))
        return cls(times=times, duration=duration)
