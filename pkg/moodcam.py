#!/usr/bin/env python3
"""
MoodCam
=======

Mood inference from passively captured facial behavior. This script is the
main controller: it ingests session/survey files, featurizes sessions,
builds the at-moment, daily and next-day sample sets, runs
leave-one-participant-out evaluation and the feature-group ablation, and
writes reports plus a reproducibility manifest.

Subcommands:
    synth      generate a synthetic cohort (sessions.jsonl, surveys.csv, manifest.json)
    featurize  session feature table, triangle pairs and IVA PCA
    build      labeled sample tables for every horizon
    run        main results table (report.json / .md / .txt, run_manifest.json)
    ablate     feature-group ablation tables in both modes
    report     re-render text/markdown tables from saved JSON reports
    reference  write the configuration reference page

Environment:
    MOODCAM_LOG   log level (DEBUG, INFO, WARNING, ERROR), also read from .env
"""

import argparse
import json
import logging
import os
import sys
import traceback
from collections import defaultdict
from datetime import datetime
from pathlib import Path

import pandas as pd
from dotenv import load_dotenv

from ablation import ABLATION_HORIZONS, run_ablation
from cohort_io import (
    dumps, ensure_dir, file_digest, read_json, read_sessions, read_surveys,
    write_cohort, write_json, write_table, write_text,
)
from config import config_from_dict, load_config, render_reference
from errors import DataError, EmptyReport, MoodCamError
from facial_features import (
    SessionFeaturizer, TriangleSpec, default_triangle_spec, filter_low_quality_frames, fit_session_pca,
)
from mood_dataset import (
    at_moment_samples, build_day_features, daily_labels, daily_samples, imputation_mask, next_day_samples,
)
from mood_learning import LopoSettings, lopo_evaluate, summarize_predictions
from mood_types import TARGETS, LandmarkLayout
from reporting import (
    TOOL_VERSION, RunManifest, ablation_report, cohort_summary, main_table, pca_summary,
    render_ablation_markdown, render_ablation_text, render_main_markdown, render_main_text,
)
from synthetic_cohort import generate_cohort

REPORT_FILE = "report.json"
ABLATION_FILE = "ablation.json"
RUN_MANIFEST_FILE = "run_manifest.json"
ERROR_FILE = "error.json"


# =========================
# Enhanced logging
# =========================
def setup_detailed_logging(level="INFO", log_dir="logs"):
    """Configure detailed logging for both file and console output"""
    os.makedirs(log_dir, exist_ok=True)
    timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
    log_file = os.path.join(log_dir, f'moodcam_{timestamp}.log')

    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stdout)
        ],
        force=True,
    )
    logging.info("=== MoodCam Started ===")
    logging.info(f"Python version: {sys.version.split()[0]}")
    logging.info(f"MoodCam version: {TOOL_VERSION}")
    return log_file


# =========================
# Pipeline
# =========================
class MoodCamPipeline:
    """Runs the pipeline stages for one configuration"""

    def __init__(self, config):
        self.config = config
        self.layout = LandmarkLayout.default()
        self.spec = self._triangle_spec()
        self.sessions = []
        self.surveys = []
        self.input_digests = {}
        self.low_quality_sessions = 0
        self.empty_sessions = 0

    @property
    def n_jobs(self):
        return self.config.model.threads

    def _triangle_spec(self):
        features = self.config.features
        if features.triangle_pairs is None:
            return default_triangle_spec(self.layout, features.centroid_index)
        if features.centroid_index is None:
            centroid = tuple(sorted(self.layout.region_map["nose_center"]))
        else:
            centroid = (features.centroid_index,)
        return TriangleSpec(pairs=features.triangle_pairs, centroid_indices=centroid, n_points=self.layout.n_points)

    def settings(self):
        model = self.config.model
        return LopoSettings(
            n_trees=model.n_trees,
            max_features=model.max_features,
            smote_k=model.smote_k,
            inner_folds=model.inner_folds,
            threshold=model.threshold,
            n_jobs=model.threads,
        )

    # ---- stages ----
    def load(self):
        data = self.config.data
        sessions = read_sessions(data.sessions_path, self.config.features.au_ids)
        self.surveys = read_surveys(data.surveys_path)
        self.input_digests = {
            "sessions": file_digest(data.sessions_path),
            "surveys": file_digest(data.surveys_path),
        }
        kept = []
        for session in sessions:
            filtered = filter_low_quality_frames(session, data.min_eye_open_p)
            if filtered is not None:
                kept.append(filtered)
        self.low_quality_sessions = len(sessions) - len(kept)
        if self.low_quality_sessions:
            logging.warning(f"Dropped {self.low_quality_sessions} sessions below eye-open probability "
                            f"{data.min_eye_open_p}")
        self.sessions = kept
        return self

    def fit_pca(self, sessions=None):
        features = self.config.features
        sessions = self.sessions if sessions is None else sessions
        return fit_session_pca(sessions, self.spec, self.layout, features.n_components, features.ear_epsilon)

    def featurize(self, pca):
        features = self.config.features
        featurizer = SessionFeaturizer(self.spec, pca, self.layout, features.au_ids,
                                       features.include_acceleration, features.ear_epsilon)
        featurized = featurizer.featurize(self.sessions, n_jobs=self.n_jobs)
        self.empty_sessions = featurizer.empty_sessions
        if not featurized:
            raise DataError("No session has a usable frame", self.config.data.sessions_path)
        return featurized

    def build(self, featurized, lags):
        windows = self.config.windows
        base = featurized[0].features.schema
        samplesets = {"at_moment": at_moment_samples(featurized, self.surveys, windows.window_minutes)}
        days = build_day_features(featurized)
        samplesets["daily"] = daily_samples(days, self.surveys, base)
        labels = daily_labels(self.surveys)
        for lag in lags:
            samples = next_day_samples(days, labels, lag, base)
            samplesets[samples.name] = samples
        return samplesets, days

    def evaluate(self, samplesets, held_out=None):
        """LopoResult per (horizon, target); cells that cannot be evaluated hold the error name"""
        model = self.config.model
        grid = model.hyperparams_grid()
        results = {}
        for name, samples in samplesets.items():
            for target in TARGETS:
                try:
                    results[(name, target)] = lopo_evaluate(samples, target, grid, model.seed, self.settings(),
                                                            held_out)
                except MoodCamError as e:
                    logging.error(f"{name}/{target} not evaluated: {type(e).__name__}: {e}")
                    results[(name, target)] = type(e).__name__
        return results

    def run_global(self, lags):
        pca = self.fit_pca()
        featurized = self.featurize(pca)
        samplesets, days = self.build(featurized, lags)
        return pca, samplesets, days, self.evaluate(samplesets)

    def run_per_fold(self, lags):
        """Refit the IVA PCA without each held-out participant, then evaluate only that participant's fold"""
        participants = sorted({s.participant_id for s in self.sessions})
        partial = defaultdict(list)
        samplesets, days = {}, []
        for participant in participants:
            logging.info(f"Per-fold PCA: holding out {participant}")
            pca = self.fit_pca([s for s in self.sessions if s.participant_id != participant])
            featurized = self.featurize(pca)
            samplesets, days = self.build(featurized, lags)
            for key, result in self.evaluate(samplesets, held_out=[participant]).items():
                partial[key].append(result)

        results = {}
        for (name, target), parts in partial.items():
            evaluated = [part for part in parts if not isinstance(part, str)]
            if not evaluated:
                results[(name, target)] = parts[0]
                continue
            folds = sorted((fold for part in evaluated for fold in part.folds), key=lambda f: f.held_out_participant)
            frames = [part.predictions for part in evaluated if len(part.predictions)]
            predictions = pd.concat(frames, ignore_index=True) if frames else evaluated[0].predictions
            results[(name, target)] = summarize_predictions(target, folds, predictions)
        return None, samplesets, days, results

    def manifest(self, pca, samplesets, days=()):
        config_snapshot = self.config.to_dict()
        # Worker count never changes results
        config_snapshot["model"].pop("threads", None)
        drops = {"low_quality_sessions": self.low_quality_sessions,
                 "sessions_without_usable_frames": self.empty_sessions}
        for name, samples in samplesets.items():
            for key, value in samples.dropped.items():
                drops[f"{name}.{key}"] = int(value)
        return RunManifest(
            config=config_snapshot,
            seed=self.config.model.seed,
            input_digests=dict(self.input_digests),
            pca_scope=self.config.features.pca_scope,
            triangle_digest=self.spec.digest(),
            n_triangle_pairs=len(self.spec),
            triangle_pairs=self.spec.to_dict()["pairs"],
            imputation_mask=imputation_mask(days),
            schema_digests={name: samples.schema.digest() for name, samples in samplesets.items()},
            drop_counters=drops,
            pca=pca_summary(pca) if pca is not None else None,
        )


# =========================
# Commands
# =========================
def _lags(config, args):
    if args.lags:
        return sorted(set(args.lags))
    return config.windows.resolved_lags()


def cmd_synth(config, args):
    cohort = generate_cohort(config.synth, n_jobs=config.model.threads)
    return write_cohort(cohort, config.data.out_dir, config.synth.au_ids)


def cmd_featurize(config, args):
    pipeline = MoodCamPipeline(config).load()
    pca = pipeline.fit_pca()
    featurized = pipeline.featurize(pca)
    out = ensure_dir(config.data.out_dir)
    schema = featurized[0].features.schema
    table = pd.DataFrame([f.features.values for f in featurized], columns=schema.names)
    meta = pd.DataFrame([(f.participant_id, f.session_id, f.start_ms, f.end_ms, f.tz_offset_minutes) for f in featurized],
                        columns=["participant_id", "session_id", "start_ms", "end_ms", "tz_offset_minutes"])
    write_table(pd.concat([meta, table], axis=1), out / "session_features.csv")
    write_json(pipeline.spec.to_dict(), out / "triangle_pairs.json")
    write_json(pca.to_dict(), out / "pca.json")
    logging.info(f"Wrote session features for {len(featurized)} sessions to {out}")
    return featurized


def cmd_build(config, args):
    pipeline = MoodCamPipeline(config).load()
    pca = pipeline.fit_pca()
    featurized = pipeline.featurize(pca)
    samplesets, _ = pipeline.build(featurized, _lags(config, args))
    out = ensure_dir(config.data.out_dir)
    for name, samples in samplesets.items():
        write_table(samples.to_frame(), out / f"samples_{name}.csv")
    summary = {
        name: {"rows": len(samples), "columns": len(samples.schema), "schema_digest": samples.schema.digest(),
               "dropped": dict(samples.dropped)}
        for name, samples in samplesets.items()
    }
    write_json(summary, out / "build_summary.json")
    return samplesets


def write_main_report(report, out):
    write_json(report, out / REPORT_FILE)
    write_text(out / "report.md", render_main_markdown(report))
    write_text(out / "report.txt", render_main_text(report))


def write_ablation_report(report, out):
    write_json(report, out / ABLATION_FILE)
    write_text(out / "ablation.md", render_ablation_markdown(report))
    write_text(out / "ablation.txt", render_ablation_text(report))


def _check_cells(results):
    failed = [
        f"{name}/{target}" for (name, target), result in sorted(results.items())
        if isinstance(result, str) or (result.pooled_f1 is None and result.pooled_auc is None)
    ]
    if failed:
        logging.warning(f"{len(failed)} of {len(results)} cells produced no metric: {', '.join(failed)}")
    if results and len(failed) == len(results):
        raise EmptyReport(f"No cell of the table produced a metric ({len(results)} cells)")


def cmd_run(config, args):
    lags = _lags(config, args)
    pipeline = MoodCamPipeline(config).load()
    if config.features.pca_scope == "per_fold":
        pca, samplesets, days, results = pipeline.run_per_fold(lags)
    else:
        pca, samplesets, days, results = pipeline.run_global(lags)

    cohort = cohort_summary(pipeline.sessions, pipeline.surveys, days,
                            pipeline.low_quality_sessions, pipeline.empty_sessions)
    report = main_table(results, list(samplesets), {name: len(s) for name, s in samplesets.items()}, cohort)
    manifest = pipeline.manifest(pca, samplesets, days)
    for (name, target), result in sorted(results.items()):
        if not isinstance(result, str):
            manifest.add_result(name, target, result, samplesets[name].schema.names)

    out = ensure_dir(config.data.out_dir)
    write_main_report(report, out)
    write_json(manifest.to_dict(), out / RUN_MANIFEST_FILE)
    sys.stdout.write(render_main_text(report))
    _check_cells(results)
    return report


def cmd_ablate(config, args):
    if config.features.pca_scope == "per_fold":
        logging.warning("Ablation uses a cohort-wide IVA PCA; per_fold scope applies to 'run' only")
    pipeline = MoodCamPipeline(config).load()
    pca = pipeline.fit_pca()
    featurized = pipeline.featurize(pca)
    samplesets, days = pipeline.build(featurized, [1, 2])
    samplesets = {name: samplesets[name] for name in ABLATION_HORIZONS}

    full = pipeline.evaluate(samplesets)
    baseline = {
        key: ({"f1": None, "auc": None} if isinstance(result, str) else {"f1": result.pooled_f1, "auc": result.pooled_auc})
        for key, result in full.items()
    }
    model = config.model
    grids = [
        run_ablation(samplesets, mode, model.hyperparams_grid(), model.seed, pipeline.settings(),
                     ABLATION_HORIZONS, config.ablation.groups, baseline)
        for mode in config.ablation.modes
    ]
    report = ablation_report(grids)
    manifest = pipeline.manifest(pca, samplesets, days)

    out = ensure_dir(config.data.out_dir)
    write_ablation_report(report, out)
    write_json(manifest.to_dict(), out / "ablation_manifest.json")
    sys.stdout.write(render_ablation_text(report))
    return report


def cmd_report(config, args):
    out = Path(config.data.out_dir)
    source = Path(args.report) if args.report else out / REPORT_FILE
    rendered = []
    if source.exists():
        report = read_json(source)
        write_text(out / "report.md", render_main_markdown(report))
        write_text(out / "report.txt", render_main_text(report))
        rendered.append(source)
    ablation_source = out / ABLATION_FILE
    if ablation_source.exists():
        report = read_json(ablation_source)
        write_text(out / "ablation.md", render_ablation_markdown(report))
        write_text(out / "ablation.txt", render_ablation_text(report))
        rendered.append(ablation_source)
    if not rendered:
        raise DataError("No saved report to render", source)
    logging.info(f"Re-rendered {', '.join(str(p) for p in rendered)}")
    return rendered


def cmd_reference(config, args):
    target = Path(args.out) / "CONFIG_REFERENCE.md" if args.out else Path("Documentation") / "CONFIG_REFERENCE.md"
    ensure_dir(target.parent)
    write_text(target, render_reference())
    logging.info(f"Wrote configuration reference to {target}")
    return target


COMMANDS = {
    "synth": cmd_synth,
    "featurize": cmd_featurize,
    "build": cmd_build,
    "run": cmd_run,
    "ablate": cmd_ablate,
    "report": cmd_report,
    "reference": cmd_reference,
}


# =========================
# Main Controller
# =========================
def _parse_lags(text):
    try:
        lags = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--lags expects comma-separated integers, got '{text}'")
    if not lags or any(lag not in (1, 2, 4, 8) for lag in lags):
        raise argparse.ArgumentTypeError("--lags values must be drawn from 1, 2, 4, 8")
    return lags


def build_parser():
    parser = argparse.ArgumentParser(description="Mood inference from passively captured facial behavior")
    parser.add_argument("command", choices=sorted(COMMANDS), help="Pipeline stage to run")
    parser.add_argument("--config", help="JSON config file (defaults apply to missing keys)")
    parser.add_argument("--out", help="Output directory (overrides data.out_dir)")
    parser.add_argument("--seed", type=int, help="Run seed (overrides model.seed and synth.seed)")
    parser.add_argument("--lags", type=_parse_lags, help="Next-day lags, e.g. 1,2 or 1,2,4,8")
    parser.add_argument("--pca-scope", choices=("global", "per_fold"), help="Overrides features.pca_scope")
    parser.add_argument("--threads", type=int, help="Parallel workers (overrides model.threads)")
    parser.add_argument("--report", help="Saved report.json for the 'report' command")
    return parser


def apply_overrides(config, args):
    data = config.to_dict()
    if args.seed is not None:
        data["model"]["seed"] = args.seed
        data["synth"]["seed"] = args.seed
    if args.out:
        data["data"]["out_dir"] = args.out
    if args.lags:
        data["windows"]["lags"] = sorted(set(args.lags))
    if args.pca_scope:
        data["features"]["pca_scope"] = args.pca_scope
    if args.threads is not None:
        data["model"]["threads"] = args.threads
    return config_from_dict(data)


def _error_record(error, command):
    record = {"error": type(error).__name__, "message": str(error), "command": command}
    if isinstance(error, DataError):
        record["path"] = error.path
        record["line"] = error.line
    return record


def _emit_error(record, out_dir):
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
    if not out_dir:
        return
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, ERROR_FILE), "w", encoding="utf-8") as handle:
            handle.write(dumps(record) + "\n")
    except OSError as e:
        logging.error(f"Could not write error record: {e}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    load_dotenv()
    out_dir = args.out or "out"
    try:
        config = apply_overrides(load_config(args.config), args)
        out_dir = config.data.out_dir
        setup_detailed_logging(config.logging.level, config.logging.log_dir)
        stale = Path(out_dir) / ERROR_FILE
        if stale.exists():
            stale.unlink()
        logging.info(f"Command: {args.command}, config: {args.config or '(defaults)'}, out: {out_dir}")
        COMMANDS[args.command](config, args)
    except MoodCamError as e:
        logging.error(f"{type(e).__name__}: {e}")
        _emit_error(_error_record(e, args.command), out_dir)
        return 2
    except Exception as e:
        logging.error(f"Fatal error: {str(e)}\n{traceback.format_exc()}")
        _emit_error(_error_record(e, args.command), out_dir)
        return 1
    logging.info(f"=== {args.command} finished ===")
    return 0


if __name__ == "__main__":
    sys.exit(main())
