"""
Shared pytest fixtures for StimLab
Small pools, short trials and seeded generators so the suite stays fast
"""
import numpy as np
import pytest

from app.models.emg import EmgGridRecord, RecordLabel
from config.config import (
    EmgConfig,
    ExperimentConfig,
    ForceConfig,
    LevelConfig,
    OutputConfig,
    PoolConfig,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_pool_config():
    return PoolConfig(n_axons=12, settle_window=1.0)


@pytest.fixture
def small_emg_config():
    return EmgConfig(rows=2, cols=4)


@pytest.fixture
def short_level():
    return LevelConfig(
        level=0.10, duration=20.0, lf_amplitude=8.0, hf_amplitude=0.6,
        periods=[(5.0, 15.0), (15.0, 20.0)],
    )


@pytest.fixture
def small_experiment(small_pool_config, small_emg_config, short_level):
    """Reduced battery: one short level, small pool, 2x4 grid, fixed amplitudes"""
    return ExperimentConfig(
        seed=11,
        pool=small_pool_config,
        emg=small_emg_config,
        force=ForceConfig(calibrate=False),
        levels=[short_level],
        output=OutputConfig(write_emg=True, write_artifact_truth=True, stim_excerpt_seconds=0.05),
    )


@pytest.fixture
def noise_record(rng):
    """Four seconds of white noise on a 2x4 grid"""
    channels = (0.01 * rng.standard_normal((8, 4 * 2048))).astype(np.float32)
    return EmgGridRecord(sample_rate=2048.0, channels=channels, rows=2, cols=4, label=RecordLabel.CLEAN)
