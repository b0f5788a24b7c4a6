import json

import numpy as np
import pytest

from config import config_from_dict, render_reference
from mood_learning import lopo_evaluate
from moodcam import MoodCamPipeline, build_parser, main
from tests.conftest import make_raw_frame, write_run_config


@pytest.fixture
def run_config(tmp_path, small_cohort_dir):
    return write_run_config(tmp_path / "run.json", small_cohort_dir, tmp_path / "out", tmp_path / "logs")


def read(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_parser_overrides():
    """Test command-line parsing of the override flags"""
    args = build_parser().parse_args(["run", "--seed", "3", "--lags", "1,4", "--pca-scope", "per_fold"])
    assert args.command == "run"
    assert args.seed == 3
    assert args.lags == [1, 4]
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--lags", "3"])


def test_synth_is_reproducible(tmp_path):
    """Test that synth writes the cohort files byte-identically for a fixed seed"""
    config = write_run_config(tmp_path / "synth.json", tmp_path, tmp_path / "unused", tmp_path / "logs",
                              synth={"n_participants": 2, "n_days": 2, "sessions_per_day": 3.0})
    for name in ("a", "b"):
        assert main(["synth", "--config", str(config), "--out", str(tmp_path / name), "--seed", "9"]) == 0
    for filename in ("sessions.jsonl", "surveys.csv", "manifest.json"):
        assert (tmp_path / "a" / filename).read_bytes() == (tmp_path / "b" / filename).read_bytes()
    assert read(tmp_path / "a" / "manifest.json")["config"]["seed"] == 9


def test_run_reports(tmp_path, run_config):
    """Test the main table, its renderings and the run manifest"""
    out = tmp_path / "out"
    assert main(["run", "--config", str(run_config)]) == 0
    report = read(out / "report.json")
    assert [row["horizon"] for row in report["rows"]] == ["at_moment", "daily", "next_day_lag1", "next_day_lag2"]
    assert [row["model"] for row in report["rows"]][-1] == "Next Day Average (2 Day Lag)"
    assert report["cohort"]["participants"] == 5
    at_moment = report["rows"][0]["valence"]
    assert at_moment["n_folds"] == 5
    assert at_moment["auc"] >= 0.6
    assert (out / "report.md").read_text(encoding="utf-8").startswith("# Mood Model Results")
    assert "At moment" in (out / "report.txt").read_text(encoding="utf-8")

    manifest = read(out / "run_manifest.json")
    assert manifest["seed"] == 5
    assert manifest["n_triangle_pairs"] == 1674
    assert len(manifest["triangle_pairs"]) == 1674
    assert manifest["triangle_pairs"][0] == sorted(manifest["triangle_pairs"][0])
    for entry in manifest["imputation_mask"]:
        assert set(entry["empty_epochs"]) <= {"midnight", "morning", "afternoon", "evening"}
    assert report["cohort"]["unusable_days"] == (report["cohort"]["days_without_survey"]
                                                + report["cohort"]["days_without_sessions"])
    assert manifest["pca"]["n_components"] == 10
    assert "threads" not in manifest["config"]["model"]
    assert len(manifest["folds"]["at_moment/valence"]) == 5
    assert set(manifest["input_digests"]) == {"sessions", "surveys"}
    assert not (out / "error.json").exists()


def test_run_is_deterministic(tmp_path, run_config):
    """Test that reruns, including a parallel one, give byte-identical reports"""
    assert main(["run", "--config", str(run_config), "--out", str(tmp_path / "one")]) == 0
    assert main(["run", "--config", str(run_config), "--out", str(tmp_path / "two"), "--threads", "2"]) == 0
    for filename in ("report.json", "report.md", "report.txt"):
        assert (tmp_path / "one" / filename).read_bytes() == (tmp_path / "two" / filename).read_bytes()
    one, two = read(tmp_path / "one" / "run_manifest.json"), read(tmp_path / "two" / "run_manifest.json")
    assert one["folds"] == two["folds"]


def test_featurize_and_build(tmp_path, run_config):
    """Test the intermediate feature and sample tables"""
    out = tmp_path / "out"
    assert main(["featurize", "--config", str(run_config)]) == 0
    assert read(out / "pca.json")["components"]
    assert len(read(out / "triangle_pairs.json")["pairs"]) == 1674
    header = (out / "session_features.csv").read_text(encoding="utf-8").splitlines()[0].split(",")
    assert header[:2] == ["participant_id", "session_id"]
    assert len(header) == 5 + 40

    assert main(["build", "--config", str(run_config), "--lags", "1,2,4"]) == 0
    summary = read(out / "build_summary.json")
    assert summary["at_moment"]["columns"] == 40
    assert summary["daily"]["columns"] == 1280
    assert summary["next_day_lag4"]["columns"] == 4 * 1280
    assert (out / "samples_next_day_lag4.csv").exists()


def test_report_rerenders(tmp_path, run_config):
    """Test that report re-renders saved JSON identically"""
    out = tmp_path / "out"
    assert main(["run", "--config", str(run_config)]) == 0
    markdown = (out / "report.md").read_bytes()
    (out / "report.md").unlink()
    assert main(["report", "--config", str(run_config)]) == 0
    assert (out / "report.md").read_bytes() == markdown


def test_ablate(tmp_path, small_cohort_dir):
    """Test both ablation modes end to end"""
    out = tmp_path / "out"
    config = write_run_config(tmp_path / "run.json", small_cohort_dir, out, tmp_path / "logs",
                              model={"n_trees": 5, "grid": {"max_depth": [3]}})
    assert main(["ablate", "--config", str(config)]) == 0
    report = read(out / "ablation.json")
    assert [mode["mode"] for mode in report["modes"]] == ["remove_group", "only_group"]
    for mode in report["modes"]:
        assert len(mode["cells"]) == 48
        assert len(mode["baseline"]) == 8
    text = (out / "ablation.txt").read_text(encoding="utf-8")
    assert "Inter-Vector Angles" in text
    assert (out / "ablation_manifest.json").exists()


def test_bad_input_writes_error_record(tmp_path, capsys):
    """Test that a malformed input line exits 2 with a located error record"""
    cohort = tmp_path / "cohort"
    cohort.mkdir()
    frame = make_raw_frame(1000)
    broken = dict(frame, smile_p=1.7)
    (cohort / "sessions.jsonl").write_text(json.dumps(frame) + "\n" + json.dumps(broken) + "\n", encoding="utf-8")
    (cohort / "surveys.csv").write_text("participant_id,timestamp_ms,tz_offset_minutes,valence,arousal\n",
                                        encoding="utf-8")
    out = tmp_path / "out"
    config = write_run_config(tmp_path / "run.json", cohort, out, tmp_path / "logs")
    assert main(["run", "--config", str(config)]) == 2
    record = read(out / "error.json")
    assert record["error"] == "DataError"
    assert record["line"] == 2
    assert record["path"].endswith("sessions.jsonl")
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "DataError"


def test_config_error_exit_code(tmp_path):
    """Test that an unknown config key exits 2"""
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"model": {"trees": 3}}), encoding="utf-8")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 2
    assert read(tmp_path / "out" / "error.json")["error"] == "ConfigError"


def test_run_without_metrics_fails(tmp_path, small_cohort_dir):
    """Test that a table whose every cell failed still gets written but exits 2"""
    cohort = tmp_path / "cohort"
    cohort.mkdir()
    lines = (small_cohort_dir / "sessions.jsonl").read_text(encoding="utf-8").splitlines()
    kept = [line for line in lines if line.strip() and json.loads(line)["participant_id"] == "P01"]
    (cohort / "sessions.jsonl").write_text("\n".join(kept) + "\n", encoding="utf-8")
    rows = (small_cohort_dir / "surveys.csv").read_text(encoding="utf-8").splitlines()
    (cohort / "surveys.csv").write_text("\n".join([rows[0]] + [r for r in rows[1:] if r.startswith("P01,")]) + "\n",
                                        encoding="utf-8")
    out = tmp_path / "out"
    config = write_run_config(tmp_path / "run.json", cohort, out, tmp_path / "logs")
    assert main(["run", "--config", str(config)]) == 2
    assert read(out / "error.json")["error"] == "EmptyReport"
    report = read(out / "report.json")
    assert {row["valence"]["error"] for row in report["rows"]} == {"TooFewParticipants"}


def test_reference_command(tmp_path):
    """Test that reference writes the rendered config page"""
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"logging": {"log_dir": str(tmp_path / "logs")}}), encoding="utf-8")
    assert main(["reference", "--config", str(config), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "CONFIG_REFERENCE.md").read_text(encoding="utf-8") == render_reference()


@pytest.mark.slow
def test_per_fold_pca(tmp_path, run_config):
    """Test that the per-fold PCA scope still evaluates every participant"""
    out = tmp_path / "out"
    assert main(["run", "--config", str(run_config), "--pca-scope", "per_fold", "--lags", "1"]) == 0
    report = read(out / "report.json")
    assert report["rows"][0]["valence"]["n_folds"] == 5
    assert read(out / "run_manifest.json")["pca"] is None


@pytest.mark.slow
def test_full_cohort_signal_and_null(tmp_path):
    """Test planted-signal recovery and the shuffled-label control on the default cohort"""
    assert main(["synth", "--config", str(write_run_config(tmp_path / "s.json", tmp_path, tmp_path / "c",
                                                            tmp_path / "logs")), "--out", str(tmp_path / "c")]) == 0
    config = config_from_dict({
        "data": {"sessions_path": str(tmp_path / "c" / "sessions.jsonl"),
                 "surveys_path": str(tmp_path / "c" / "surveys.csv"),
                 "out_dir": str(tmp_path / "out")},
        "model": {"threads": -1},
    })
    pipeline = MoodCamPipeline(config).load()
    featurized = pipeline.featurize(pipeline.fit_pca())
    samplesets, _ = pipeline.build(featurized, [1])
    samples = samplesets["at_moment"]
    grid = config.model.hyperparams_grid()

    planted = lopo_evaluate(samples, "valence", grid, config.model.seed, pipeline.settings())
    assert planted.pooled_auc >= 0.85
    assert planted.pooled_f1 >= 0.8

    labels = np.random.default_rng(0).permutation(samples.labels("valence"))
    shuffled = lopo_evaluate(samples.with_labels("valence", labels), "valence", grid, config.model.seed,
                             pipeline.settings())
    assert 0.45 <= shuffled.pooled_auc <= 0.55
