"""
Stimulation models - LF/HF waveform parameters and sampled current trains
"""
import enum
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Union

import numpy as np

from app.errors import ParameterError


class StimProtocol(enum.Enum):
    """Stimulation protocols"""
    LF = "LF"
    HF = "HF"


@dataclass(frozen=True)
class LfParams:
    """Conventional low-frequency biphasic pulse train"""

    amplitude: float
    base_frequency: float = 30.0
    pulse_width: float = 500e-6

    def __post_init__(self):
        if self.base_frequency <= 0:
            raise ParameterError("base_frequency must be positive", base_frequency=self.base_frequency)
        if 2 * self.pulse_width > 1.0 / self.base_frequency or self.pulse_width <= 0:
            raise ParameterError(
                "biphasic pulse does not fit in one period",
                pulse_width=self.pulse_width,
                base_frequency=self.base_frequency,
            )
        if self.amplitude < 0:
            raise ParameterError("amplitude must be non-negative", amplitude=self.amplitude)

    @property
    def protocol(self) -> StimProtocol:
        return StimProtocol.LF

    @property
    def frequency(self) -> float:
        return self.base_frequency

    @property
    def narrowest_pulse(self) -> float:
        return self.pulse_width

    def with_amplitude(self, amplitude: float) -> "LfParams":
        return LfParams(amplitude=amplitude, base_frequency=self.base_frequency, pulse_width=self.pulse_width)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "protocol": self.protocol.value,
            "base_frequency_hz": self.base_frequency,
            "pulse_width_s": self.pulse_width,
            "pulse_interval_s": None,
            "amplitude_mA": self.amplitude,
        }


@dataclass(frozen=True)
class HfParams:
    """Kilohertz carrier delivered in charge-balanced bursts"""

    amplitude: float
    burst_frequency: float = 30.0
    pulse_width: float = 80e-6
    pulse_interval: float = 20e-6

    def __post_init__(self):
        if self.burst_frequency <= 0:
            raise ParameterError("burst_frequency must be positive", burst_frequency=self.burst_frequency)
        if self.pulse_width <= 0 or self.pulse_interval < 0:
            raise ParameterError(
                "pulse_width must be positive and pulse_interval non-negative",
                pulse_width=self.pulse_width,
                pulse_interval=self.pulse_interval,
            )
        if self.amplitude < 0:
            raise ParameterError("amplitude must be non-negative", amplitude=self.amplitude)
        if self.pulses_per_half_burst < 1:
            raise ParameterError(
                "burst period cannot hold one balanced pulse pair",
                burst_frequency=self.burst_frequency,
                carrier_period=self.carrier_period,
            )

    @property
    def protocol(self) -> StimProtocol:
        return StimProtocol.HF

    @property
    def frequency(self) -> float:
        return self.burst_frequency

    @property
    def narrowest_pulse(self) -> float:
        return self.pulse_width

    @property
    def carrier_period(self) -> float:
        return self.pulse_width + self.pulse_interval

    @property
    def carrier_frequency(self) -> float:
        return 1.0 / self.carrier_period

    @property
    def duty_cycle(self) -> float:
        """Nominal duty cycle of the carrier"""
        return self.pulse_width / self.carrier_period

    @property
    def pulses_per_half_burst(self) -> int:
        """N positive (and N negative) pulses per burst"""
        carriers = math.floor((1.0 / self.burst_frequency) / self.carrier_period + 1e-9)
        return carriers // 2

    def with_amplitude(self, amplitude: float) -> "HfParams":
        return HfParams(
            amplitude=amplitude,
            burst_frequency=self.burst_frequency,
            pulse_width=self.pulse_width,
            pulse_interval=self.pulse_interval,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "protocol": self.protocol.value,
            "base_frequency_hz": self.burst_frequency,
            "pulse_width_s": self.pulse_width,
            "pulse_interval_s": self.pulse_interval,
            "amplitude_mA": self.amplitude,
        }


StimParams = Union[LfParams, HfParams]


@dataclass
class StimTrain:
    """Sample-accurate stimulation current (mA)"""

    sample_rate: float
    samples: np.ndarray
    params: StimParams
    duration: float
    onsets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def protocol(self) -> StimProtocol:
        return self.params.protocol

    @property
    def protocol_tag(self) -> str:
        return self.params.protocol.value

    @property
    def onset_times(self) -> np.ndarray:
        """Pulse (LF) or burst (HF) onset times in seconds"""
        return self.onsets / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)

    def metadata(self) -> Dict[str, Any]:
        meta = self.params.to_dict()
        meta["sample_rate_hz"] = self.sample_rate
        return meta


@dataclass(frozen=True)
class ChargeBalance:
    """Result of a charge-balance check (milliamp-seconds)"""

    net_charge: float
    total_charge: float
    imbalanced: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "net_charge_mAs": self.net_charge,
            "total_charge_mAs": self.total_charge,
            "imbalanced": self.imbalanced,
        }
