"""
StimLab command-line entry point
Subcommands simulate, clean, analyze, stats and report share config, seed and output flags
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import structlog
from pydantic import ValidationError

from app import __version__
from app.errors import DataError, MissingFileError, StatsInputError, StimLabError, UsageError
from app.models.analysis import PeriodSet, TrialMetrics
from app.models.manifest import RunManifest
from app.models.removal import HfRemovalParams, LfRemovalParams
from app.services.analysis import (
    amplitude_table,
    analyze_trial,
    initial_force_check,
    normalized_rms_table,
    residual_table,
    smooth_force,
)
from app.services.artifact_removal import remove_hf, remove_lf, score_removal
from app.services.battery import run_battery
from app.services.emg_synth import make_baseline
from app.services.file_handler import FileHandler
from app.services.report_plots import force_profile_figure, normalized_rms_figure, rms_map_figure, save_svg
from app.services.stats import cross_subject_stats
from config import format_validation_error, get_settings, load_experiment_config
from config.config import ExperimentConfig, Settings, default_experiment_config

logger = structlog.get_logger(__name__)

ANALYSIS_DIR = "analysis"
STATS_DIR = "stats"
REPORT_DIR = "report"


def configure_logging(settings: Settings):
    """Configure structured logging for the application"""

    logging.basicConfig(
        format='%(message)s',
        stream=sys.stderr,
        level=getattr(logging, settings.LOG_LEVEL.upper())
    )

    structlog.configure(
        processors=[
            structlog.stdlib.add_log_level,
            structlog.stdlib.add_logger_name,
            structlog.processors.TimeStamper(fmt="ISO"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.JSONRenderer()
            if settings.LOG_FORMAT == "json"
            else structlog.dev.ConsoleRenderer()
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        logger_factory=structlog.stdlib.LoggerFactory(),
        context_class=dict,
        cache_logger_on_first_use=True,
    )


class _Parser(argparse.ArgumentParser):
    """Argument errors become usage errors (exit 1)"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stimlab", description="Simulate and analyze LF vs HF stimulation fatigue experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="experiment JSON document (defaults are embedded)")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out", help="run directory (default: OUTPUT_DIR)")
    parser.add_argument("--jobs", type=int, help="worker processes for trials")
    parser.add_argument("--print-defaults", action="store_true", help="print the default experiment document")
    commands = parser.add_subparsers(dest="command")

    simulate = commands.add_parser("simulate", help="run the condition x level battery")
    simulate.add_argument("--conditions", nargs="+", choices=["Vol", "HF", "LF"])
    simulate.add_argument("--levels", nargs="+", type=float)
    simulate.add_argument("--subjects", type=int, default=1, help="simulated subjects (pools with different seeds)")

    clean = commands.add_parser("clean", help="remove stimulation artifacts from a grid record")
    clean.add_argument("record", help="contaminated .semg record")
    clean.add_argument("--protocol", required=True, type=str.lower, choices=["lf", "hf"])
    clean.add_argument("--baseline", help="rest-state .semg record for LF replacement")
    clean.add_argument("--truth", help="artifact-free .semg record for attenuation scoring")
    clean.add_argument("--output", help="cleaned record path (default: <record>_clean.semg)")

    commands.add_parser("analyze", help="compute force and EMG metrics for a run")
    commands.add_parser("stats", help="group statistics across simulated subjects")
    commands.add_parser("report", help="render SVG figures from analysis outputs")
    return parser


def _experiment_config(args) -> ExperimentConfig:
    settings = get_settings()
    seed = args.seed if args.seed is not None else settings.MASTER_SEED
    if args.config and not Path(args.config).is_file():
        raise MissingFileError("config file not found", path=args.config)
    try:
        return load_experiment_config(args.config, seed=seed)
    except json.JSONDecodeError as e:
        raise UsageError(f"config is not valid JSON: {e}", path=args.config)
    except ValueError as e:
        raise UsageError(str(e), path=args.config)


def _run_dir(args) -> Path:
    return Path(args.out) if args.out else get_settings().output_path


def _run_config(handler: FileHandler, manifest: RunManifest) -> ExperimentConfig:
    config = ExperimentConfig.model_validate(handler.read_json("config.json"))
    if config.config_hash != manifest.config_hash:
        raise DataError("run config does not match the manifest hash")
    return config


def cmd_simulate(args) -> RunManifest:
    """Run the battery (or the selected subset) and write trial records plus the manifest"""
    config = _experiment_config(args)
    jobs = args.jobs if args.jobs is not None else get_settings().JOBS
    if jobs < 1:
        raise UsageError("--jobs must be at least 1")
    if args.subjects < 1:
        raise UsageError("--subjects must be at least 1")
    if args.levels:
        known = [lv.level for lv in config.levels]
        for value in args.levels:
            if not any(abs(value - k) < 1e-9 for k in known):
                raise UsageError(f"level {value} is not configured", levels=known)
    return run_battery(config, str(_run_dir(args)), args.subjects, args.conditions, args.levels, jobs)


def cmd_clean(args) -> Dict:
    """Clean one record with the LF or HF pipeline and write the record plus a removal report"""
    config = _experiment_config(args)
    handler = FileHandler()
    valid, message = handler.validate_record_file(args.record)
    if not valid:
        raise DataError(message, path=args.record)
    record = handler.read_record(args.record)

    if args.protocol == "lf":
        if args.baseline:
            baseline = handler.read_record(args.baseline).channels
        else:
            baseline = make_baseline(config.removal.baseline_duration, config.emg.noise_rms_mv,
                                     config.seed, config.emg).channels
        params = LfRemovalParams(baseline=baseline, stim_frequency=config.stim.lf_base_frequency,
                                 search_margin=config.removal.lf_search_margin,
                                 replace_window=config.removal.lf_replace_window)
        cleaned, report = remove_lf(record, params, config.seed)
    else:
        rc = config.removal
        cleaned, report = remove_hf(record, HfRemovalParams(rc.hf_window, rc.hf_step, rc.hf_group,
                                                             rc.align_max_shift, rc.outlier_sigma))

    if args.truth:
        truth = handler.read_record(args.truth)
        if truth.channels.shape != record.channels.shape:
            raise DataError("truth record shape does not match the input record")
        score_removal(report, record, cleaned, truth)
    payload = report.to_dict()
    payload["ground_truth"] = bool(args.truth)
    output = Path(args.output) if args.output else Path(args.record).with_name(Path(args.record).stem + "_clean.semg")
    handler.write_record(cleaned, output)
    handler.write_json(payload, output.with_suffix(".removal.json"))
    logger.info("Record cleaned", protocol=args.protocol, output=str(output))
    return payload


def _trial_metrics(handler: FileHandler, config: ExperimentConfig, entry) -> TrialMetrics:
    level = config.level(entry.level)
    force = handler.read_force(entry.files["force"])
    emg = handler.read_record(entry.files["emg"]) if "emg" in entry.files else None
    return analyze_trial(entry.condition, entry.level, force, entry.mvc, PeriodSet.of(level.periods), emg,
                         entry.stim_amplitude, config.analysis)


def cmd_analyze(args) -> Dict:
    """Per-trial metrics, per-subject tables and the initial-force check for a run"""
    handler = FileHandler(_run_dir(args))
    manifest = handler.read_manifest()
    problems = handler.verify_hashes(manifest)
    if problems:
        raise MissingFileError("run files are missing or changed", files=problems)
    config = _run_config(handler, manifest)

    summary: Dict[str, Dict] = {}
    for subject in manifest.subjects:
        metrics = []
        for entry in manifest.trials_for(subject):
            m = _trial_metrics(handler, config, entry)
            metrics.append(m)
            base = f"{ANALYSIS_DIR}/{subject}/{m.key}"
            force = handler.read_force(entry.files["force"])
            centers, smoothed = smooth_force(force, config.analysis.smooth_window, config.analysis.smooth_step)
            handler.write_table(pd.DataFrame({"time_s": centers, "force_pct_mvc": 100.0 * smoothed / m.mvc}),
                                f"{base}/smoothed_force.csv", index=False)
            if m.rms_map is not None:
                handler.write_matrix(m.rms_map.base, f"{base}/map_base.csv")
                handler.write_matrix(m.rms_map.interpolated, f"{base}/map_interpolated.csv")
            trial_meta = handler.read_json(entry.files["trial"])
            payload = m.to_dict()
            payload["removal"] = trial_meta.get("removal")
            handler.write_json(payload, f"{base}/metrics.json")

        handler.write_table(residual_table(metrics), f"{ANALYSIS_DIR}/{subject}/residual_table.csv")
        handler.write_table(normalized_rms_table(metrics), f"{ANALYSIS_DIR}/{subject}/normalized_rms.csv", index=False)
        if any(m.stim_amplitude is not None for m in metrics):
            handler.write_table(amplitude_table(metrics), f"{ANALYSIS_DIR}/{subject}/amplitude_table.csv")
        check = initial_force_check(metrics)
        handler.write_json(check, f"{ANALYSIS_DIR}/{subject}/initial_force.json")
        summary[subject] = {
            "trials": [m.to_dict() for m in metrics],
            "initial_force_check": check,
        }

    report = {"config_hash": manifest.config_hash, "subjects": summary}
    handler.write_json(report, f"{ANALYSIS_DIR}/analysis_report.json")
    logger.info("Run analyzed", subjects=len(manifest.subjects), trials=len(manifest.trials))
    return report


def _load_metrics(handler: FileHandler, manifest: RunManifest) -> Dict[str, List[TrialMetrics]]:
    metrics = {}
    for subject in manifest.subjects:
        metrics[subject] = [
            TrialMetrics.from_dict(handler.read_json(f"{ANALYSIS_DIR}/{subject}/{entry.key}/metrics.json"))
            for entry in manifest.trials_for(subject)
        ]
    return metrics


def cmd_stats(args) -> Dict:
    """Cross-subject statistics from analyzed metrics"""
    handler = FileHandler(_run_dir(args))
    manifest = handler.read_manifest()
    config = _run_config(handler, manifest)
    if len(manifest.subjects) < 2:
        raise StatsInputError("group statistics need at least two simulated subjects; rerun simulate with --subjects",
                              subjects=len(manifest.subjects))
    report = cross_subject_stats(_load_metrics(handler, manifest), config.stats)
    handler.write_json(json.loads(json.dumps(report, default=float)), f"{STATS_DIR}/stats_report.json")
    return report


def cmd_report(args) -> List[str]:
    """SVG force profiles, normalized RMS curves and RMS maps per subject and level"""
    handler = FileHandler(_run_dir(args))
    manifest = handler.read_manifest()
    written = []
    for subject in manifest.subjects:
        entries = manifest.trials_for(subject)
        for level in dict.fromkeys(e.level for e in entries):
            label = f"{level:.2f}"
            frames = []
            for entry in (e for e in entries if e.level == level):
                path = handler.path(f"{ANALYSIS_DIR}/{subject}/{entry.key}/smoothed_force.csv")
                if not path.exists():
                    raise MissingFileError("analysis outputs are missing; run analyze first", path=str(path))
                frames.append(pd.read_csv(path).assign(condition=entry.condition))
                map_path = handler.path(f"{ANALYSIS_DIR}/{subject}/{entry.key}/map_interpolated.csv")
                if map_path.exists():
                    surface = pd.read_csv(map_path, header=None).to_numpy()
                    fig = rms_map_figure(surface, f"{subject} {entry.key} RMS map")
                    written.append(save_svg(fig, handler.path(f"{REPORT_DIR}/{subject}/{entry.key}_rms_map.svg")))
            fig = force_profile_figure(pd.concat(frames, ignore_index=True), f"{subject} force at {label} MVC")
            written.append(save_svg(fig, handler.path(f"{REPORT_DIR}/{subject}/force_{label}.svg")))

            table = pd.read_csv(handler.path(f"{ANALYSIS_DIR}/{subject}/normalized_rms.csv"))
            table = table[np.isclose(table["level"], level)]
            if not table.empty:
                fig = normalized_rms_figure(table, f"{subject} normalized RMS at {label} MVC")
                written.append(save_svg(fig, handler.path(f"{REPORT_DIR}/{subject}/normalized_rms_{label}.svg")))
    logger.info("Report rendered", figures=len(written))
    return [str(p) for p in written]


COMMANDS = {
    "simulate": cmd_simulate,
    "clean": cmd_clean,
    "analyze": cmd_analyze,
    "stats": cmd_stats,
    "report": cmd_report,
}


def _fail(error: StimLabError) -> int:
    logger.error("Command failed", category=error.category, message=error.message)
    print(json.dumps({"error": {"category": error.category, "message": error.message}}), file=sys.stderr)
    return error.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging(get_settings())
    try:
        args = build_parser().parse_args(argv)
        if args.print_defaults:
            print(json.dumps(default_experiment_config().model_dump(mode="json"), sort_keys=True, indent=2))
            return 0
        if args.command is None:
            raise UsageError("a command is required: simulate, clean, analyze, stats or report")
        COMMANDS[args.command](args)
        return 0
    except ValidationError as e:
        return _fail(UsageError(f"invalid configuration: {format_validation_error(e)}"))
    except StimLabError as e:
        return _fail(e)
    except OSError as e:
        return _fail(DataError(f"file access failed: {e}"))
    except ValueError as e:
        return _fail(DataError(f"malformed data: {e}"))


if __name__ == '__main__':
    sys.exit(main())
