"""
Artifact removal models - parameters and per-record removal reports
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from app.errors import ParameterError


@dataclass(frozen=True)
class LfRemovalParams:
    """Peak-replacement settings for low-frequency stimulation artifacts"""

    baseline: np.ndarray = field(repr=False)
    stim_frequency: float = 30.0
    search_margin: float = 2.5e-3
    replace_window: float = 5e-3

    def __post_init__(self):
        if self.replace_window >= 1.0 / self.stim_frequency:
            raise ParameterError("replace_window must be shorter than one interstimulus interval")
        if self.baseline is None or np.asarray(self.baseline).size == 0:
            raise ParameterError("baseline must be non-empty")


@dataclass(frozen=True)
class HfRemovalParams:
    """Template-subtraction settings for high-frequency stimulation artifacts"""

    window: float = 0.5
    step: float = 0.5
    group: int = 8
    max_shift: int = 10
    outlier_sigma: float = 3.0

    @property
    def block_seconds(self) -> float:
        return self.window * self.group


@dataclass
class RemovalReport:
    """What a removal pass did to each channel"""

    method: str
    sample_rate: float
    event_counts: List[int] = field(default_factory=list)
    blocks_processed: int = 0
    passthrough_samples: int = 0
    flags: List[str] = field(default_factory=list)
    attenuation_db: Optional[List[float]] = None
    overall_attenuation_db: Optional[float] = None

    def flag(self, message: str):
        if message not in self.flags:
            self.flags.append(message)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "sample_rate": self.sample_rate,
            "event_counts": list(self.event_counts),
            "blocks_processed": self.blocks_processed,
            "passthrough_samples": self.passthrough_samples,
            "flags": list(self.flags),
            "attenuation_db": self.attenuation_db,
            "overall_attenuation_db": self.overall_attenuation_db,
        }
