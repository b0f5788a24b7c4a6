#!/usr/bin/env python3
"""
MoodCam Reports
===============

Builds the main results table (one row per model horizon, F1 and AUC per
target), the feature-group ablation tables and the run manifest. JSON keeps
full precision; the text and markdown renderings round to 2 decimals.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from mood_dataset import local_day
from mood_types import GROUP_LABELS, TARGETS, FeatureGroup

TOOL_VERSION = "1.0.0"
REPORT_SCHEMA_VERSION = 1


def horizon_label(name):
    if name == "at_moment":
        return "At moment"
    if name == "daily":
        return "Daily Average"
    if name.startswith("next_day_lag"):
        return f"Next Day Average ({int(name[len('next_day_lag'):])} Day Lag)"
    raise ValueError(f"Unknown horizon '{name}'")


def fmt(value, error=None):
    if value is None:
        return error or "n/a"
    return f"{value:.2f}"


# =========================
# Main table
# =========================
def _cell(result):
    return {
        "f1": result.pooled_f1,
        "auc": result.pooled_auc,
        "f1_low": result.pooled_f1_low,
        "f1_mean_fold": result.mean_fold_f1,
        "auc_mean_fold": result.mean_fold_auc,
        "f1_degenerate": result.f1_degenerate,
        "n_samples": int(len(result.predictions)),
        "n_folds": len(result.folds),
        "skipped_folds": [fold.held_out_participant for fold in result.skipped_folds],
    }


def main_table(results: Mapping, horizons: Sequence[str], sample_counts: Mapping[str, int], cohort: Mapping):
    """
    Report dict for the main table.

    results maps (horizon, target) to a LopoResult; a missing pair becomes a
    cell with null metrics and an error string.
    """
    rows = []
    for horizon in horizons:
        row = {"model": horizon_label(horizon), "horizon": horizon, "n_rows": int(sample_counts.get(horizon, 0))}
        for target in TARGETS:
            result = results.get((horizon, target))
            if isinstance(result, str) or result is None:
                row[target] = {"f1": None, "auc": None, "error": result or "not evaluated"}
            else:
                row[target] = _cell(result)
        rows.append(row)
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "table": "mood_model",
        "targets": list(TARGETS),
        "rows": rows,
        "cohort": dict(cohort),
    }


def main_table_frame(report):
    records = []
    for row in report["rows"]:
        record = {"Mood Model": row["model"]}
        for target in report["targets"]:
            cell = row[target]
            error = cell.get("error")
            record[f"{target.capitalize()} F1"] = fmt(cell.get("f1"), error and "err")
            record[f"{target.capitalize()} AUC"] = fmt(cell.get("auc"), error and "err")
        records.append(record)
    return pd.DataFrame.from_records(records)


def _markdown(frame: pd.DataFrame):
    header = "| " + " | ".join(frame.columns) + " |"
    rule = "|" + "|".join("---" for _ in frame.columns) + "|"
    body = ["| " + " | ".join(str(v) for v in record) + " |" for record in frame.itertuples(index=False)]
    return "\n".join([header, rule] + body) + "\n"


def render_main_text(report):
    return main_table_frame(report).to_string(index=False) + "\n"


def render_main_markdown(report):
    lines = ["# Mood Model Results", "", _markdown(main_table_frame(report))]
    flagged = [
        f"{row['model']} / {target}"
        for row in report["rows"] for target in report["targets"]
        if row[target].get("f1_degenerate")
    ]
    if flagged:
        lines.append("F1 is 0 by convention (no positive predictions or labels) for: " + ", ".join(flagged) + "\n")
    return "\n".join(lines)


# =========================
# Ablation tables
# =========================
def ablation_report(grids):
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "table": "ablation",
        "targets": list(TARGETS),
        "modes": [grid.to_dict() for grid in grids],
    }


def ablation_frame(mode_report):
    """6 group rows x (horizon x target x metric) columns"""
    cells = {(c["group"], c["horizon"], c["target"]): c for c in mode_report["cells"]}
    records = []
    for group in mode_report["groups"]:
        record = {"Feature Set": GROUP_LABELS[FeatureGroup(group)]}
        for horizon in mode_report["horizons"]:
            for target in TARGETS:
                cell = cells[(group, horizon, target)]
                error = "err" if cell["error"] else None
                prefix = f"{horizon_label(horizon)} {target.capitalize()}"
                record[f"{prefix} F1"] = fmt(cell["f1"], error)
                record[f"{prefix} AUC"] = fmt(cell["auc"], error)
        records.append(record)
    return pd.DataFrame.from_records(records)


def _mode_title(mode):
    return "Feature group removed" if mode == "remove_group" else "Feature group only"


def render_ablation_text(report):
    parts = []
    for mode_report in report["modes"]:
        parts.append(f"== {_mode_title(mode_report['mode'])} ({mode_report['mode']}) ==")
        parts.append(ablation_frame(mode_report).to_string(index=False))
        parts.append("")
    return "\n".join(parts)


def render_ablation_markdown(report):
    parts = ["# Feature Set Ablation", ""]
    for mode_report in report["modes"]:
        parts += [f"## {_mode_title(mode_report['mode'])} (`{mode_report['mode']}`)", ""]
        parts.append(_markdown(ablation_frame(mode_report)))
        errors = [c for c in mode_report["cells"] if c["error"]]
        for cell in errors:
            parts.append(f"- {cell['group']} / {cell['horizon']} / {cell['target']}: {cell['error']}")
        if errors:
            parts.append("")
    return "\n".join(parts)


# =========================
# Cohort summary
# =========================
def cohort_summary(sessions, surveys, days, low_quality_sessions=0, empty_sessions=0):
    """
    Dataset description: counts of participants, sessions, survey days and usable days.

    A participant-day is unusable when it has sessions but no survey, or
    surveys but no usable session.
    """
    per_participant = pd.Series([s.participant_id for s in sessions]).value_counts()
    survey_days = pd.DataFrame(
        [(s.participant_id, local_day(s.timestamp_ms, s.tz_offset_minutes)) for s in surveys],
        columns=["participant_id", "day"],
    )
    per_day = survey_days.groupby(["participant_id", "day"]).size()
    participants = sorted({s.participant_id for s in sessions} | {s.participant_id for s in surveys})
    session_keys = {(d.participant_id, d.day) for d in days}
    survey_keys = set(per_day.index.tolist())
    without_survey = len(session_keys - survey_keys)
    without_sessions = len(survey_keys - session_keys)
    return {
        "participants": len(participants),
        "sessions": len(sessions),
        "mean_sessions_per_participant": float(per_participant.mean()) if len(per_participant) else 0.0,
        "surveys": len(surveys),
        "participant_days_with_sessions": len(session_keys),
        "participant_days_with_surveys": int(len(per_day)),
        "mean_surveys_per_day": float(per_day.mean()) if len(per_day) else 0.0,
        "days_without_survey": without_survey,
        "days_without_sessions": without_sessions,
        "unusable_days": without_survey + without_sessions,
        "low_quality_sessions": int(low_quality_sessions),
        "sessions_without_usable_frames": int(empty_sessions),
    }


# =========================
# Run manifest
# =========================
@dataclass
class RunManifest:
    """Everything needed to reproduce a report from its inputs"""
    config: Dict
    seed: int
    input_digests: Dict[str, str]
    pca_scope: str
    triangle_digest: str
    n_triangle_pairs: int
    triangle_pairs: List[List[int]] = field(default_factory=list)
    imputation_mask: List[Dict] = field(default_factory=list)
    schema_digests: Dict[str, str] = field(default_factory=dict)
    drop_counters: Dict[str, int] = field(default_factory=dict)
    folds: Dict[str, List[Dict]] = field(default_factory=dict)
    tuning_fallbacks: List[str] = field(default_factory=list)
    f1_positive_class: str = "high"
    pca: Optional[Dict] = None
    tool_version: str = TOOL_VERSION

    def add_result(self, horizon, target, result, schema_names=None):
        key = f"{horizon}/{target}"
        self.folds[key] = [fold.to_dict(schema_names) for fold in result.folds]
        for fold in result.folds:
            if fold.tuning_fallback:
                self.tuning_fallbacks.append(f"{key}/{fold.held_out_participant}: {fold.tuning_fallback}")

    def to_dict(self):
        return {
            "tool_version": self.tool_version,
            "config": self.config,
            "seed": self.seed,
            "input_digests": dict(sorted(self.input_digests.items())),
            "pca_scope": self.pca_scope,
            "pca": self.pca,
            "triangle_pairs_digest": self.triangle_digest,
            "n_triangle_pairs": self.n_triangle_pairs,
            "triangle_pairs": self.triangle_pairs,
            "imputation_mask": self.imputation_mask,
            "schema_digests": dict(sorted(self.schema_digests.items())),
            "drop_counters": dict(sorted(self.drop_counters.items())),
            "f1_positive_class": self.f1_positive_class,
            "tuning_fallbacks": list(self.tuning_fallbacks),
            "folds": dict(sorted(self.folds.items())),
        }


def pca_summary(model):
    variance = np.asarray(model.explained_variance, dtype=float)
    total = variance.sum()
    return {
        "n_components": model.n_components,
        "explained_variance": variance.tolist(),
        "explained_variance_ratio_of_kept": (variance / total).tolist() if total > 0 else [0.0] * len(variance),
    }
