"""
Configuration management for StimLab
Environment-level settings plus the versioned experiment document
"""
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings

SCHEMA_VERSION = 1


class Settings(BaseSettings):
    """Application configuration with validation"""

    # Application
    APP_NAME: str = "StimLab"
    APP_VERSION: str = "1.0.0"
    DEBUG: bool = False

    # Runs
    OUTPUT_DIR: str = "data/runs"
    JOBS: int = 1
    MASTER_SEED: Optional[int] = None

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v):
        """Ensure the level is a stdlib logging level name"""
        level = v.upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"Unknown log level '{v}'")
        return level

    @field_validator("LOG_FORMAT")
    @classmethod
    def validate_log_format(cls, v):
        if v not in ("json", "console"):
            raise ValueError("LOG_FORMAT must be 'json' or 'console'")
        return v

    @field_validator("JOBS")
    @classmethod
    def validate_jobs(cls, v):
        """Ensure a sane worker count"""
        if v < 1 or v > 64:
            raise ValueError("JOBS must be between 1 and 64")
        return v

    @property
    def output_path(self) -> Path:
        return Path(self.OUTPUT_DIR)

    model_config = {"env_file": ".env", "case_sensitive": True, "extra": "ignore"}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class StimConfig(_Section):
    """Stimulation waveform parameters shared by all levels"""

    sample_rate: float = 100_000.0
    lf_base_frequency: float = 30.0
    lf_pulse_width: float = 500e-6
    hf_burst_frequency: float = 30.0
    hf_pulse_width: float = 80e-6
    hf_pulse_interval: float = 20e-6

    @model_validator(mode="after")
    def check_waveforms(self):
        if self.lf_base_frequency <= 0 or self.hf_burst_frequency <= 0:
            raise ValueError("stimulation frequencies must be positive")
        if 2 * self.lf_pulse_width > 1.0 / self.lf_base_frequency:
            raise ValueError("lf_pulse_width: biphasic pulse does not fit in one period")
        if self.sample_rate * self.lf_pulse_width < 10 - 1e-9:
            raise ValueError("sample_rate: fewer than 10 samples per LF phase")
        carrier_period = self.hf_pulse_width + self.hf_pulse_interval
        if carrier_period <= 0:
            raise ValueError("hf_pulse_width + hf_pulse_interval must be positive")
        ratio = self.sample_rate * carrier_period
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise ValueError("sample_rate must be an integer multiple of the HF carrier frequency")
        if math.floor(math.floor((1.0 / self.hf_burst_frequency) / carrier_period + 1e-9) / 2) < 1:
            raise ValueError("HF burst period cannot hold one balanced pulse pair")
        return self


class PoolConfig(_Section):
    """Motor axon population and membrane model"""

    n_axons: int = 120
    diameter_min_um: float = 5.0
    diameter_max_um: float = 20.0
    diameter_exponent: float = 1.0
    gain_scale: float = 215.0
    tau_m: float = 20e-3
    threshold: float = 1.0
    refractory: float = 20e-3
    anodic_efficacy: float = 0.98
    threshold_jitter: float = 0.0
    refractory_jitter: float = 0.0
    dt: float = 20e-6
    settle_window: float = 2.0
    max_cycle_periods: int = 10

    @model_validator(mode="after")
    def check_pool(self):
        if self.n_axons < 1:
            raise ValueError("n_axons must be at least 1")
        if not 0 < self.diameter_min_um < self.diameter_max_um:
            raise ValueError("diameter range must satisfy 0 < min < max")
        if self.diameter_exponent < 0:
            raise ValueError("diameter_exponent must be non-negative")
        if self.tau_m <= 0 or self.threshold <= 0 or self.refractory < 0 or self.gain_scale <= 0:
            raise ValueError("tau_m, threshold and gain_scale must be positive, refractory non-negative")
        if not 0 <= self.anodic_efficacy < 1:
            raise ValueError("anodic_efficacy must lie in [0, 1)")
        if self.threshold_jitter < 0 or self.refractory_jitter < 0:
            raise ValueError("jitter values must be non-negative")
        if self.dt <= 0 or self.settle_window <= 0 or self.max_cycle_periods < 1:
            raise ValueError("dt, settle_window and max_cycle_periods must be positive")
        return self


class ForceConfig(_Section):
    """Twitch, fatigue and calibration constants"""

    sample_rate: float = 1000.0
    twitch_peak_min: float = 0.01
    twitch_peak_range: float = 30.0
    contraction_time_max: float = 0.09
    contraction_time_range: float = 3.0
    fatigue_rate_max: float = 0.02
    recovery_rate: float = 0.005
    phi_min: float = 0.2
    rate_max: float = 40.0
    fatigue_step: float = 0.01
    rate_window: float = 1.0
    calibrate: bool = True
    calibration_window: Tuple[float, float] = (5.0, 15.0)
    amplitude_min: float = 0.0
    amplitude_max: float = 20.0
    calibration_tolerance: float = 0.02
    calibration_iterations: int = 40

    @model_validator(mode="after")
    def check_force(self):
        if self.twitch_peak_min <= 0 or self.twitch_peak_range < 1 or self.contraction_time_range < 1:
            raise ValueError("twitch peak must be positive and ranges at least 1")
        if not 0 <= self.phi_min < 1:
            raise ValueError("phi_min must lie in [0, 1)")
        if self.rate_max <= 0 or self.fatigue_rate_max < 0 or self.recovery_rate < 0:
            raise ValueError("rate_max must be positive, fatigue and recovery rates non-negative")
        if self.fatigue_step <= 0 or self.rate_window <= 0 or self.sample_rate <= 0:
            raise ValueError("fatigue_step, rate_window and sample_rate must be positive")
        start, end = self.calibration_window
        if not 0 <= start < end:
            raise ValueError("calibration_window must be an increasing pair")
        if not 0 <= self.amplitude_min < self.amplitude_max:
            raise ValueError("amplitude bounds must satisfy 0 <= min < max")
        return self


class VoluntaryConfig(_Section):
    """Size-principle recruitment and effort controller"""

    recruitment_range: float = 30.0
    min_rate: float = 8.0
    peak_rate_first: float = 35.0
    peak_rate_last: float = 25.0
    rate_gain: float = 1.0
    controller_gain: float = 2.0
    control_step: float = 0.01
    isi_cv: float = 0.1

    @model_validator(mode="after")
    def check_voluntary(self):
        if self.recruitment_range < 1 or self.rate_gain <= 0 or self.control_step <= 0:
            raise ValueError("recruitment_range >= 1, rate_gain and control_step > 0 required")
        if not 0 < self.min_rate <= min(self.peak_rate_first, self.peak_rate_last):
            raise ValueError("min_rate must be positive and below the peak rates")
        if not 0 <= self.isi_cv < 0.5:
            raise ValueError("isi_cv must lie in [0, 0.5)")
        return self


class EmgConfig(_Section):
    """Electrode grid, MUAP templates and acquisition noise"""

    rows: int = 8
    cols: int = 16
    pitch_mm: float = 10.0
    sample_rate: float = 2048.0
    muap_duration_min: float = 0.010
    muap_duration_max: float = 0.015
    muap_amplitude_mv: float = 0.3
    spatial_decay_min_mm: float = 10.0
    spatial_decay_max_mm: float = 25.0
    noise_rms_mv: float = 0.005
    fatigue_coupling: float = 1.0
    band_low_hz: float = 10.0
    band_high_hz: float = 900.0
    filter_order: int = 4
    spatial_policy: Dict[str, str] = Field(
        default_factory=lambda: {"Vol": "dispersed", "HF": "dispersed", "LF": "focal"}
    )

    @model_validator(mode="after")
    def check_emg(self):
        if self.rows < 2 or self.cols < 2 or self.pitch_mm <= 0:
            raise ValueError("grid needs at least 2x2 electrodes with positive pitch")
        if not 0 < self.muap_duration_min <= self.muap_duration_max:
            raise ValueError("MUAP duration range is inverted")
        if not 0 < self.band_low_hz < self.band_high_hz < self.sample_rate / 2:
            raise ValueError("band edges must lie inside (0, Nyquist)")
        if not 0 < self.spatial_decay_min_mm <= self.spatial_decay_max_mm:
            raise ValueError("spatial decay range is inverted")
        if self.fatigue_coupling < 0:
            raise ValueError("fatigue_coupling must be non-negative")
        for condition, policy in self.spatial_policy.items():
            if policy not in ("focal", "dispersed"):
                raise ValueError(f"spatial_policy[{condition}] must be 'focal' or 'dispersed'")
        return self


class ArtifactConfig(_Section):
    """Stimulation artifact injection"""

    lf_ratio: float = 100.0
    lf_jitter: float = 0.5e-3
    lf_amplitude_jitter: float = 0.05
    hf_ratio: float = 100.0
    hf_amp_drift: float = 0.5
    hf_time_drift: float = 1e-5
    hf_harmonics: int = 10
    hf_alias_harmonic: int = 8
    hf_alias_weight: float = 0.3

    @model_validator(mode="after")
    def check_artifacts(self):
        if self.lf_ratio < 10 or self.hf_ratio < 10:
            raise ValueError("artifact magnitude ratios must be at least 10")
        if not 0 <= self.lf_jitter <= 2e-3:
            raise ValueError("lf_jitter must lie in [0, 2 ms]")
        if self.hf_harmonics < 1:
            raise ValueError("hf_harmonics must be at least 1")
        return self


class RemovalConfig(_Section):
    """Artifact removal parameters"""

    lf_search_margin: float = 2.5e-3
    lf_replace_window: float = 5e-3
    hf_window: float = 0.5
    hf_step: float = 0.5
    hf_group: int = 8
    align_max_shift: int = 10
    outlier_sigma: float = 3.0
    baseline_duration: float = 2.0

    @model_validator(mode="after")
    def check_removal(self):
        if self.lf_search_margin <= 0 or self.lf_replace_window <= 0:
            raise ValueError("LF margin and replacement window must be positive")
        if self.hf_window <= 0 or self.hf_step <= 0 or self.hf_group < 2:
            raise ValueError("HF window/step must be positive and group at least 2")
        if self.align_max_shift < 0 or self.outlier_sigma <= 0 or self.baseline_duration <= 0:
            raise ValueError("alignment range, outlier sigma and baseline duration are invalid")
        return self


class LevelConfig(_Section):
    """One target force level of the battery"""

    level: float
    duration: float
    lf_amplitude: float
    hf_amplitude: float
    periods: List[Tuple[float, float]]

    @model_validator(mode="after")
    def check_level(self):
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.lf_amplitude < 0 or self.hf_amplitude < 0:
            raise ValueError("amplitudes must be non-negative")
        if not self.periods or tuple(self.periods[0]) != (5.0, 15.0):
            raise ValueError("periods must start with the initial (5, 15) s period")
        previous_end = 0.0
        for start, end in self.periods:
            if not previous_end <= start < end <= self.duration:
                raise ValueError("periods must be increasing, non-overlapping and inside the trial")
            previous_end = end
        return self

    @property
    def label(self) -> str:
        return f"{self.level:.2f}"


def _default_levels() -> List[LevelConfig]:
    return [
        LevelConfig(
            level=0.10, duration=300.0, lf_amplitude=5.22, hf_amplitude=0.37,
            periods=[(5.0, 15.0), (15.0, 72.0), (72.0, 129.0), (129.0, 186.0), (186.0, 243.0), (243.0, 300.0)],
        ),
        LevelConfig(
            level=0.25, duration=240.0, lf_amplitude=5.76, hf_amplitude=0.49,
            periods=[(5.0, 15.0), (15.0, 60.0), (60.0, 105.0), (105.0, 150.0), (150.0, 195.0), (195.0, 240.0)],
        ),
        LevelConfig(
            level=0.40, duration=180.0, lf_amplitude=6.13, hf_amplitude=0.59,
            periods=[(5.0, 15.0), (15.0, 50.0), (50.0, 80.0), (80.0, 120.0), (120.0, 165.0)],
        ),
    ]


class AnalysisConfig(_Section):
    smooth_window: float = 1.0
    smooth_step: float = 0.5
    interpolation_factor: int = 10
    map_window: Optional[Tuple[float, float]] = None

    @model_validator(mode="after")
    def check_analysis(self):
        if self.smooth_window <= 0 or self.smooth_step <= 0 or self.interpolation_factor < 1:
            raise ValueError("smoothing window/step and interpolation factor must be positive")
        if self.map_window is not None and self.map_window[1] - self.map_window[0] < 1.0:
            raise ValueError("map_window must span at least 1 s")
        return self


class StatsConfig(_Section):
    alpha: float = 0.05
    two_sided: bool = True
    wilcoxon_exact_max_n: int = 12
    continuity_correction: bool = True

    @field_validator("alpha")
    @classmethod
    def validate_alpha(cls, v):
        if not 0 < v < 1:
            raise ValueError("alpha must lie in (0, 1)")
        return v


class OutputConfig(_Section):
    write_emg: bool = True
    write_artifact_truth: bool = False
    stim_excerpt_seconds: float = 0.1


class ExperimentConfig(BaseModel):
    """The complete, versioned experiment document"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    schema_version: int = SCHEMA_VERSION
    seed: int = 7
    conditions: List[str] = Field(default_factory=lambda: ["Vol", "HF", "LF"])
    stim: StimConfig = Field(default_factory=StimConfig)
    pool: PoolConfig = Field(default_factory=PoolConfig)
    force: ForceConfig = Field(default_factory=ForceConfig)
    voluntary: VoluntaryConfig = Field(default_factory=VoluntaryConfig)
    emg: EmgConfig = Field(default_factory=EmgConfig)
    artifacts: ArtifactConfig = Field(default_factory=ArtifactConfig)
    removal: RemovalConfig = Field(default_factory=RemovalConfig)
    levels: List[LevelConfig] = Field(default_factory=_default_levels)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    stats: StatsConfig = Field(default_factory=StatsConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @field_validator("schema_version")
    @classmethod
    def validate_schema(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {SCHEMA_VERSION}")
        return v

    @field_validator("conditions")
    @classmethod
    def validate_conditions(cls, v):
        unknown = [c for c in v if c not in ("Vol", "HF", "LF")]
        if unknown or not v or len(set(v)) != len(v):
            raise ValueError(f"conditions must be a non-empty unique subset of Vol/HF/LF, got {v}")
        return v

    @model_validator(mode="after")
    def check_cross_module(self):
        """Preconditions that span more than one section"""
        ratio = self.pool.dt * self.stim.sample_rate
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise ValueError("pool.dt must be an integer multiple of the stimulation sample period")
        narrowest = min(self.stim.lf_pulse_width, self.stim.hf_pulse_width)
        if self.pool.dt > narrowest / 4 * (1 + 1e-9):
            raise ValueError("pool.dt must not exceed a quarter of the narrowest pulse width")
        if self.removal.lf_replace_window >= 1.0 / self.stim.lf_base_frequency:
            raise ValueError("removal.lf_replace_window must be shorter than one interstimulus interval")
        if not self.levels:
            raise ValueError("at least one level is required")
        start, end = self.force.calibration_window
        for level in self.levels:
            if end > level.duration:
                raise ValueError(f"calibration window exceeds the {level.label} trial duration")
        return self

    def level(self, value: float) -> LevelConfig:
        """Look up a level section by its target fraction"""
        for level in self.levels:
            if math.isclose(level.level, value, abs_tol=1e-9):
                return level
        raise KeyError(f"no level {value} in configuration")

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def default_experiment_config() -> ExperimentConfig:
    """Embedded defaults"""
    return ExperimentConfig()


def load_experiment_config(path: Optional[str] = None, **overrides) -> ExperimentConfig:
    """
    Load an experiment document and apply top-level overrides

    Args:
        path: JSON file; None uses the embedded defaults
        overrides: top-level fields (e.g. seed) replacing document values

    Returns:
        Validated ExperimentConfig

    Raises:
        pydantic.ValidationError with field-level messages
        ValueError when the document is not a JSON object
    """
    data = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ValueError(f"config document must be a JSON object, got {type(data).__name__}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.model_validate(data)


def format_validation_error(error: ValidationError) -> str:
    """Flatten pydantic errors into 'field.path: message' lines"""
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{location}: {item['msg']}")
    return "; ".join(lines)


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get application settings"""
    return settings
