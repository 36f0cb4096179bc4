"""
Battery Service - runs and persists the condition x level trial battery
Seeds are derived from the master seed so every trial is reproducible on its own
"""
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from app import __version__
from app.models.axon import AxonPool
from app.models.emg import RecordLabel, SpatialPolicy
from app.models.manifest import RunManifest, TrialEntry
from app.models.muscle import Condition, MotorUnit, TrialRecord
from app.models.removal import HfRemovalParams, LfRemovalParams
from app.models.stimulation import StimProtocol
from app.services.artifact_removal import remove_hf, remove_lf, score_removal
from app.services.axon_pool import pool_from_config, recruitment_fraction, simulate_protocol, vector_strength
from app.services.emg_synth import inject_hf_artifact, inject_lf_artifact, make_baseline, make_templates, synthesize_emg
from app.services.file_handler import FileHandler
from app.services.muscle_force import (
    build_motor_units,
    calibrate_amplitude,
    force_with_fatigue,
    mvc,
    voluntary_trial,
)
from app.services.stim_protocol import (
    default_amplitude,
    export_stim_excerpt,
    onset_times,
    params_from_config,
    synthesize,
)
from config.config import ExperimentConfig, LevelConfig

logger = structlog.get_logger(__name__)

CONDITION_ORDER = ("Vol", "HF", "LF")


def subject_name(index: int) -> str:
    return f"subject_{index:02d}"


def derive_seeds(master: int, subject: int, condition_index: int, level_index: int) -> Dict[str, int]:
    """Independent per-trial streams for spikes, EMG noise, artifacts and removal"""
    state = np.random.SeedSequence(master, spawn_key=(subject, 1, condition_index, level_index)).generate_state(4)
    return {
        "spikes": int(state[0]),
        "noise": int(state[1]),
        "artifact": int(state[2]),
        "removal": int(state[3]),
    }


def subject_seeds(master: int, subject: int) -> Dict[str, int]:
    return {
        "pool": int(np.random.SeedSequence(master, spawn_key=(subject, 0)).generate_state(1)[0]),
        "templates": int(np.random.SeedSequence(master, spawn_key=(subject, 2)).generate_state(1)[0]),
    }


def build_subject(config: ExperimentConfig, subject: int) -> Tuple[AxonPool, List[MotorUnit]]:
    """One simulated subject: axon pool plus its motor units"""
    pool = pool_from_config(config.pool, subject_seeds(config.seed, subject)["pool"])
    return pool, build_motor_units(pool, config.force)


def _stimulated(config: ExperimentConfig, pool: AxonPool, units: Sequence[MotorUnit], protocol: StimProtocol,
                level: LevelConfig, seed: int) -> TrialRecord:
    pc, sc = config.pool, config.stim

    def simulate(params, duration):
        return simulate_protocol(pool.fresh_copy(), params, duration, sc.sample_rate, pc.dt,
                                 pc.settle_window, pc.max_cycle_periods, seed)

    params = params_from_config(protocol, default_amplitude(protocol, level), sc)
    calibration = None
    if config.force.calibrate:
        calibration = calibrate_amplitude(params, simulate, units, level.level, config.force)
        params = params.with_amplitude(calibration.amplitude)

    spikes = simulate(params, level.duration)
    force, _, spike_phi = force_with_fatigue(spikes, units, 1.0 / config.force.sample_rate, level.duration,
                                             fatigue_step=config.force.fatigue_step,
                                             rate_window=config.force.rate_window)
    extras = {"recruitment_fraction": recruitment_fraction(spikes), "params": params.to_dict()}
    if not spikes.is_empty:
        extras["vector_strength"] = vector_strength(spikes, params.frequency)
    return TrialRecord(
        condition=Condition(protocol.value),
        target_level=level.level,
        duration=level.duration,
        stim_amplitude=params.amplitude,
        spikes=spikes,
        force=force,
        mvc=mvc(units),
        seed=seed,
        calibration=calibration,
        extras=extras,
        spike_fatigue=spike_phi,
    )


def _add_emg(config: ExperimentConfig, record: TrialRecord, units: Sequence[MotorUnit], subject: int,
             seeds: Dict[str, int]):
    ec, ac, rc = config.emg, config.artifacts, config.removal
    policy = SpatialPolicy(ec.spatial_policy.get(record.condition.value, "dispersed"))
    templates = make_templates(units, subject_seeds(config.seed, subject)["templates"], policy, ec)
    label = RecordLabel.VOL if record.condition is Condition.VOL else RecordLabel.CLEAN
    gains = None
    if record.spike_fatigue is not None and ec.fatigue_coupling > 0:
        gains = [phi ** ec.fatigue_coupling for phi in record.spike_fatigue]
    clean = synthesize_emg(record.spikes, templates, record.duration, ec.noise_rms_mv, seeds["noise"], ec, label,
                           spike_gains=gains)
    record.clean_emg = clean
    if record.condition is Condition.VOL:
        record.emg = clean
        return

    protocol = StimProtocol(record.condition.value)
    params = params_from_config(protocol, record.stim_amplitude, config.stim)
    onsets = onset_times(params, record.duration, config.stim.sample_rate)
    if protocol is StimProtocol.LF:
        raw, truth = inject_lf_artifact(clean, onsets, ac.lf_ratio, seeds["artifact"], ac.lf_jitter,
                                        ac.lf_amplitude_jitter)
        baseline = make_baseline(rc.baseline_duration, ec.noise_rms_mv, seeds["removal"], ec)
        removal = LfRemovalParams(baseline=baseline.channels, stim_frequency=params.frequency,
                                  search_margin=rc.lf_search_margin, replace_window=rc.lf_replace_window)
        cleaned, report = remove_lf(raw, removal, seeds["removal"])
    else:
        half_burst = params.pulses_per_half_burst * params.carrier_period * params.burst_frequency
        raw, truth = inject_hf_artifact(clean, onsets, ac.hf_ratio, ac.hf_amp_drift, ac.hf_time_drift,
                                        seeds["artifact"], params.burst_frequency, half_burst, ac)
        cleaned, report = remove_hf(raw, HfRemovalParams(rc.hf_window, rc.hf_step, rc.hf_group,
                                                          rc.align_max_shift, rc.outlier_sigma))
    record.raw_emg = raw
    record.artifact = truth
    record.emg = cleaned
    record.extras["removal"] = score_removal(report, raw, cleaned, clean).to_dict()


def run_trial(config: ExperimentConfig, subject: int, condition: str, level: LevelConfig,
              pool: Optional[AxonPool] = None, units: Optional[List[MotorUnit]] = None) -> TrialRecord:
    """
    Simulate one trial end to end

    Stimulated trials calibrate their amplitude (when enabled), then force and
    EMG are derived from the spikes; contaminated EMG is cleaned with the
    protocol's removal pipeline.
    """
    if pool is None or units is None:
        pool, units = build_subject(config, subject)
    seeds = derive_seeds(config.seed, subject, CONDITION_ORDER.index(condition),
                         [lv.level for lv in config.levels].index(level.level))
    if condition == Condition.VOL.value:
        record = voluntary_trial(units, level.level, level.duration, seeds["spikes"], config)
    else:
        record = _stimulated(config, pool, units, StimProtocol(condition), level, seeds["spikes"])
    if config.output.write_emg:
        _add_emg(config, record, units, subject, seeds)
    logger.info("Trial finished", subject=subject_name(subject), trial=record.key,
                stim_amplitude_ma=record.stim_amplitude)
    return record


def write_trial(handler: FileHandler, record: TrialRecord, directory: str, config: ExperimentConfig) -> Dict[str, str]:
    """Persist a trial; returns kind -> relative path"""
    files = {
        "force": handler.write_force(record.force, f"{directory}/force.csv"),
        "spikes": handler.write_spikes(record.spikes, f"{directory}/spikes.csv"),
    }
    meta = {
        "condition": record.condition.value,
        "level": record.target_level,
        "duration_s": record.duration,
        "seed": record.seed,
        "mvc_N": record.mvc,
        "n_axons": record.spikes.n_axons,
        "stim_amplitude_mA": record.stim_amplitude,
        "calibration": record.calibration.to_dict() if record.calibration else None,
        "calibration_history": record.calibration.history if record.calibration else [],
    }
    for key in ("recruitment_fraction", "vector_strength", "params", "removal", "saturated_at_s", "max_drive"):
        if key in record.extras:
            meta[key] = record.extras[key]
    if "drive" in record.extras:
        drive = np.asarray(record.extras["drive"])
        frame = pd.DataFrame({"time_s": np.arange(drive.size) * record.extras["drive_step_s"], "drive": drive})
        files["drive"] = handler.write_table(frame, f"{directory}/drive.csv", index=False)

    if record.emg is not None:
        files["emg"] = handler.write_record(record.emg, f"{directory}/emg.semg")
    if record.raw_emg is not None:
        files["emg_raw"] = handler.write_record(record.raw_emg, f"{directory}/emg_raw.semg")
    if config.output.write_artifact_truth and record.artifact is not None:
        files["emg_truth"] = handler.write_record(record.clean_emg, f"{directory}/emg_truth.semg")
        truth = record.clean_emg.with_channels(record.artifact.artifact, RecordLabel.CLEAN)
        files["artifact"] = handler.write_record(truth, f"{directory}/artifact.semg")
    if record.condition.is_stimulation and config.output.stim_excerpt_seconds > 0:
        params = params_from_config(StimProtocol(record.condition.value), record.stim_amplitude, config.stim)
        excerpt = min(config.output.stim_excerpt_seconds, record.duration)
        train = synthesize(params, excerpt, config.stim.sample_rate)
        csv_path, sidecar = export_stim_excerpt(train, handler.path(f"{directory}/stim_excerpt.csv"), excerpt)
        files["stim_excerpt"], files["stim_excerpt_meta"] = csv_path, sidecar

    files["trial"] = handler.write_json(meta, f"{directory}/trial.json")
    return {kind: Path(path).relative_to(handler.root).as_posix() for kind, path in files.items()}


def _run_task(config_json: str, out_dir: str, subject: int, condition: str, level_value: float) -> dict:
    """Process-pool entry point: one trial, written to disk"""
    config = ExperimentConfig.model_validate_json(config_json)
    level = config.level(level_value)
    record = run_trial(config, subject, condition, level)
    handler = FileHandler(out_dir)
    directory = f"{subject_name(subject)}/{record.key}"
    files = write_trial(handler, record, directory, config)
    return TrialEntry(
        subject=subject_name(subject),
        key=record.key,
        condition=condition,
        level=level.level,
        duration=level.duration,
        seed=record.seed,
        directory=directory,
        stim_amplitude=record.stim_amplitude,
        mvc=record.mvc,
        files=files,
    ).model_dump()


def run_battery(
    config: ExperimentConfig,
    out_dir: str,
    subjects: int = 1,
    conditions: Optional[Sequence[str]] = None,
    levels: Optional[Sequence[float]] = None,
    jobs: int = 1,
) -> RunManifest:
    """
    Run every (subject, condition, level) trial and write the manifest

    Trials are independent; with jobs > 1 they run in a process pool. The
    manifest lists trials in subject, condition, level order.
    """
    conditions = list(conditions) if conditions else list(config.conditions)
    selected = [config.level(v) for v in levels] if levels else list(config.levels)
    tasks = [(s, c, lv.level) for s in range(subjects) for c in conditions for lv in selected]
    handler = FileHandler(out_dir)
    manifest = RunManifest(tool_version=__version__, config_hash=config.config_hash, master_seed=config.seed,
                           subjects=[subject_name(s) for s in range(subjects)])
    logger.info("Battery started", trials=len(tasks), subjects=subjects, jobs=jobs, out=str(out_dir))

    config_json = config.model_dump_json()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = [executor.submit(_run_task, config_json, str(out_dir), *task) for task in tasks]
            entries = [f.result() for f in futures]
    else:
        entries = [_run_task(config_json, str(out_dir), *task) for task in tasks]

    handler.write_json(config.model_dump(mode="json"), "config.json")
    manifest.trials = [TrialEntry.model_validate(e) for e in entries]
    paths = ["config.json"] + [p for t in manifest.trials for p in t.files.values()]
    manifest.file_hashes = {p: handler.hash(p) for p in sorted(paths)}
    manifest.complete()
    handler.write_manifest(manifest)
    return manifest
