"""
EMG models - MUAP templates, grid recordings and artifact ground truth
"""
import enum
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np


class RecordLabel(enum.Enum):
    """What an EMG grid record contains"""
    CLEAN = "clean"
    LF_CONTAMINATED = "lf_contaminated"
    HF_CONTAMINATED = "hf_contaminated"
    VOL = "vol"


class SpatialPolicy(enum.Enum):
    """How motor unit territories are placed under the grid"""
    FOCAL = "focal"
    DISPERSED = "dispersed"


@dataclass(frozen=True)
class MuapTemplate:
    """One unit's action potential waveform and its footprint on the grid"""

    unit_id: int
    center: Tuple[float, float]
    spatial_decay: float
    waveform: np.ndarray = field(repr=False)
    amplitude: float

    def channel_weights(self, rows: int, cols: int, pitch_mm: float) -> np.ndarray:
        """Gaussian amplitude per electrode, row-major"""
        r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
        distance_sq = ((r - self.center[0]) ** 2 + (c - self.center[1]) ** 2) * pitch_mm ** 2
        return np.exp(-distance_sq / (2.0 * self.spatial_decay ** 2)).ravel()


@dataclass
class EmgGridRecord:
    """Monopolar grid EMG (millivolts), channels stored row-major as (rows*cols, samples)"""

    sample_rate: float
    channels: np.ndarray
    rows: int = 8
    cols: int = 16
    label: RecordLabel = RecordLabel.CLEAN

    def __post_init__(self):
        if self.channels.ndim != 2 or self.channels.shape[0] != self.rows * self.cols:
            raise ValueError(
                f"channels must have shape ({self.rows * self.cols}, n), got {self.channels.shape}"
            )

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def length(self) -> int:
        return self.channels.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate

    def channel(self, row: int, col: int) -> np.ndarray:
        return self.channels[row * self.cols + col]

    def header(self) -> Dict[str, Any]:
        return {
            "rate": self.sample_rate,
            "rows": self.rows,
            "cols": self.cols,
            "label": self.label.value,
            "length": self.length,
        }

    def with_channels(self, channels: np.ndarray, label: RecordLabel) -> "EmgGridRecord":
        return EmgGridRecord(self.sample_rate, channels, self.rows, self.cols, label)


@dataclass
class ArtifactGroundTruth:
    """Injected artifact per channel plus the stimulus events it follows"""

    artifact: np.ndarray = field(repr=False)
    event_times: np.ndarray

    @property
    def n_events(self) -> int:
        return len(self.event_times)
