"""
CLI and file format tests - grid records, manifests, exit codes and a small end-to-end run
"""
import json

import numpy as np
import pandas as pd
import pytest

from app.main import main
from app.models.axon import SpikeTrainSet
from app.models.emg import RecordLabel
from app.models.manifest import MANIFEST_NAME
from app.services.battery import derive_seeds
from app.services.emg_synth import inject_lf_artifact, make_baseline
from app.services.file_handler import RECORD_MAGIC, FileHandler
from app.services.report_plots import force_profile_figure, normalized_rms_figure, rms_map_figure


@pytest.fixture
def experiment_file(tmp_path, small_experiment):
    path = tmp_path / "experiment.json"
    path.write_text(small_experiment.model_dump_json(), encoding="utf-8")
    return str(path)


def test_record_round_trip_is_byte_identical(tmp_path, noise_record):
    handler = FileHandler(tmp_path)
    first = handler.write_record(noise_record, "a.semg")
    restored = handler.read_record("a.semg")
    np.testing.assert_array_equal(restored.channels, noise_record.channels)
    assert restored.label is RecordLabel.CLEAN
    assert (restored.rows, restored.cols, restored.sample_rate) == (2, 4, 2048.0)
    second = handler.write_record(restored, "b.semg")
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes().startswith(RECORD_MAGIC)


def test_record_validation(tmp_path, noise_record):
    handler = FileHandler(tmp_path)
    (tmp_path / "bad.semg").write_bytes(b"NOPE" + bytes(32))
    valid, message = handler.validate_record_file("bad.semg")
    assert not valid
    assert "magic" in message

    path = handler.write_record(noise_record, "short.semg")
    path.write_bytes(path.read_bytes()[:-4])
    valid, message = handler.validate_record_file("short.semg")
    assert not valid
    assert "payload size" in message

    assert handler.validate_record_file("missing.semg")[0] is False


def test_print_defaults(capsys):
    assert main(["--print-defaults"]) == 0
    document = json.loads(capsys.readouterr().out)
    assert document["schema_version"] == 1
    assert [level["level"] for level in document["levels"]] == [0.10, 0.25, 0.40]


def test_usage_errors_exit_1(tmp_path):
    assert main([]) == 1
    assert main(["simulate", "--conditions", "Tetanus"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 99}), encoding="utf-8")
    assert main(["--config", str(bad), "simulate"]) == 1
    (tmp_path / "broken.json").write_text("{", encoding="utf-8")
    assert main(["--config", str(tmp_path / "broken.json"), "simulate"]) == 1


def test_config_document_must_be_an_object(tmp_path, capsys):
    for index, document in enumerate(([], [{"seed": 1}], 7, "levels")):
        path = tmp_path / f"document_{index}.json"
        path.write_text(json.dumps(document), encoding="utf-8")
        assert main(["--config", str(path), "--out", str(tmp_path / "run"), "simulate"]) == 1
        error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert error["error"]["category"] == "usage"
        assert "JSON object" in error["error"]["message"]


def test_unknown_level_is_rejected(tmp_path, experiment_file):
    assert main(["--config", experiment_file, "--out", str(tmp_path / "run"), "simulate", "--levels", "0.5"]) == 1
    assert not (tmp_path / "run").exists()


def test_data_errors_exit_2(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "absent.json"), "simulate"]) == 2
    (tmp_path / "bad.semg").write_bytes(b"XXXX" + bytes(16))
    assert main(["clean", str(tmp_path / "bad.semg"), "--protocol", "hf"]) == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"]["category"] == "data"


def test_clean_lf_record(tmp_path, experiment_file, small_emg_config):
    truth = make_baseline(4.0, 0.005, 5, small_emg_config)
    onsets = 0.01 + np.arange(119) / 30.0
    raw, _ = inject_lf_artifact(truth, onsets, 100.0, 3)
    handler = FileHandler(tmp_path)
    handler.write_record(raw, "raw.semg")
    handler.write_record(truth, "truth.semg")

    code = main(["--config", experiment_file, "clean", str(tmp_path / "raw.semg"), "--protocol", "LF",
                 "--truth", str(tmp_path / "truth.semg")])
    assert code == 0
    report = handler.read_json("raw_clean.removal.json")
    assert report["method"] == "lf"
    assert report["ground_truth"] is True
    assert report["overall_attenuation_db"] > 20.0
    cleaned = handler.read_record("raw_clean.semg")
    assert cleaned.label is RecordLabel.CLEAN
    assert cleaned.channels.shape == raw.channels.shape


def test_stats_needs_two_subjects(tmp_path, experiment_file):
    out = str(tmp_path / "run")
    assert main(["--config", experiment_file, "--out", out, "simulate", "--conditions", "Vol"]) == 0
    assert main(["--out", out, "stats"]) == 2


def test_simulate_analyze_stats(tmp_path, experiment_file):
    out = tmp_path / "run"
    assert main(["--config", experiment_file, "--out", str(out), "simulate", "--subjects", "2"]) == 0

    handler = FileHandler(out)
    manifest = handler.read_manifest()
    assert manifest.subjects == ["subject_00", "subject_01"]
    assert [t.key for t in manifest.trials_for("subject_00")] == ["Vol_0.10", "HF_0.10", "LF_0.10"]
    assert manifest.completed_at is not None
    assert handler.verify_hashes(manifest) == {}
    hf = manifest.trials_for("subject_00")[1]
    assert hf.directory == "subject_00/HF_0.10"
    assert {"force", "spikes", "emg", "emg_raw", "emg_truth", "artifact", "stim_excerpt", "trial"} <= set(hf.files)
    assert hf.stim_amplitude == pytest.approx(0.6)

    assert main(["--out", str(out), "analyze"]) == 0
    report = handler.read_json("analysis/analysis_report.json")
    assert report["config_hash"] == manifest.config_hash
    trials = report["subjects"]["subject_01"]["trials"]
    assert [t["condition"] for t in trials] == ["Vol", "HF", "LF"]
    assert all(t["normalized_rms"][0] == pytest.approx(1.0) for t in trials)
    smoothed = pd.read_csv(out / "analysis" / "subject_00" / "LF_0.10" / "smoothed_force.csv")
    assert len(smoothed) == 39

    assert main(["--out", str(out), "stats"]) == 0
    stats = handler.read_json("stats/stats_report.json")
    assert stats["subjects"] == ["subject_00", "subject_01"]
    assert set(stats["initial_force"]) == {"0.10"}
    assert "amplitude" not in stats

    force = out / hf.files["force"]
    force.write_text(force.read_text() + "20.0,0.0\n")
    assert main(["--out", str(out), "analyze"]) == 2


def test_pipeline_outputs_are_byte_identical_across_runs(tmp_path, experiment_file):
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(["--config", experiment_file, "--out", str(out), "simulate", "--subjects", "2"]) == 0
        assert main(["--out", str(out), "analyze"]) == 0
        assert main(["--out", str(out), "stats"]) == 0
        # the manifest carries wall-clock timestamps
        outputs.append({
            path.relative_to(out).as_posix(): path.read_bytes()
            for path in sorted(out.rglob("*"))
            if path.is_file() and path.name != MANIFEST_NAME
        })
    assert "stats/stats_report.json" in outputs[0]
    assert "analysis/analysis_report.json" in outputs[0]
    assert outputs[0].keys() == outputs[1].keys()
    for path, content in outputs[0].items():
        assert outputs[1][path] == content, path
    first = FileHandler(tmp_path / "first").read_manifest()
    second = FileHandler(tmp_path / "second").read_manifest()
    assert first.file_hashes == second.file_hashes


def test_figures_build_without_rendering():
    frame = pd.DataFrame({
        "time_s": [0.5, 1.0, 0.5, 1.0],
        "force_pct_mvc": [10.0, 9.0, 10.5, 8.0],
        "condition": ["HF", "HF", "LF", "LF"],
    })
    assert len(force_profile_figure(frame, "force").data) == 2

    rms = pd.DataFrame({"condition": ["HF", "HF"], "start_s": [5.0, 15.0], "end_s": [15.0, 20.0],
                        "normalized_rms": [1.0, 1.2]})
    fig = normalized_rms_figure(rms, "rms")
    assert list(fig.data[0].x) == [10.0, 17.5]

    surface = np.array([[-0.1, 0.2], [0.3, 0.4]])
    assert np.min(rms_map_figure(surface, "map").data[0].z) == 0.0


def test_spike_table_keeps_silent_axons(tmp_path):
    spikes = SpikeTrainSet(times=[np.array([0.01, 0.0433]), np.zeros(0), np.array([0.5])], duration=1.0)
    handler = FileHandler(tmp_path)
    handler.write_spikes(spikes, "spikes.csv")
    restored = handler.read_spikes("spikes.csv", n_axons=3, duration=1.0)
    assert restored.counts().tolist() == [2, 0, 1]
    np.testing.assert_array_equal(restored.times[0], spikes.times[0])


def test_trial_seeds_are_reproducible_and_distinct():
    assert derive_seeds(7, 0, 1, 0) == derive_seeds(7, 0, 1, 0)
    streams = [derive_seeds(7, s, c, lv) for s in range(2) for c in range(3) for lv in range(3)]
    values = [v for seeds in streams for v in seeds.values()]
    assert len(set(values)) == len(values)
