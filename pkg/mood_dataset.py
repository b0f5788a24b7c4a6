#!/usr/bin/env python3
"""
Mood Sample Sets
================

Joins featurized sessions with Circumplex surveys into the three labeled
sample sets:

- at moment: one row per session captured within the window before a survey
- daily average: per participant-day epoch statistics, labeled by the day's mean mood
- next-day average: the previous `lag` days of epoch statistics, labeled by the next day's mean mood

All day and epoch bucketing uses participant local time.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.impute import SimpleImputer

from errors import DataError, EmptyDay, OutOfRange, SchemaMismatch
from facial_features import FeaturizedSession
from mood_types import (
    SCORE_MAX, SCORE_MIN, VALID_LAGS, FeatureSchema, Horizon, SampleSet,
    SurveyResponse, local_time,
)

DEFAULT_WINDOW_MINUTES = 30
EPOCHS = ("midnight", "morning", "afternoon", "evening")
STATISTICS = ("min", "max", "mean", "median", "sum", "std", "q1", "q3")
MS_PER_MINUTE = 60_000
MS_PER_DAY = 86_400_000


# =========================
# Labels
# =========================
@dataclass(frozen=True)
class LabelPolicy:
    """Scores below the threshold are low (0); the threshold and above are high (1)"""
    threshold: float = 0.0

    def apply(self, score):
        score = float(score)
        if not SCORE_MIN <= score <= SCORE_MAX:
            raise OutOfRange(f"Mood score {score} outside [{SCORE_MIN}, {SCORE_MAX}]")
        return 0 if score < self.threshold else 1


DEFAULT_LABEL_POLICY = LabelPolicy()


def binarize(score):
    return DEFAULT_LABEL_POLICY.apply(score)


def _check_schema(sessions: Sequence[FeaturizedSession]) -> FeatureSchema:
    if not sessions:
        raise SchemaMismatch("No featurized sessions supplied")
    schema = sessions[0].features.schema
    for session in sessions[1:]:
        if session.features.schema != schema:
            raise SchemaMismatch(
                f"Session {session.participant_id}/{session.session_id} has a different feature schema"
            )
    return schema


def _meta_frame(records, extra_columns):
    columns = ["row_id", "participant_id", "reference_time", "valence_label", "arousal_label"] + list(extra_columns)
    return pd.DataFrame.from_records(records, columns=columns)


# =========================
# At-moment samples
# =========================
def at_moment_samples(sessions: Sequence[FeaturizedSession], surveys: Sequence[SurveyResponse],
                      window_minutes=DEFAULT_WINDOW_MINUTES, policy: LabelPolicy = DEFAULT_LABEL_POLICY):
    """
    Label every session that ends within `window_minutes` before a survey of the same participant.

    A session matching several surveys goes to the nearest one (earliest on ties);
    unmatched sessions are dropped and counted.
    """
    schema = _check_schema(sessions)
    window_ms = int(window_minutes) * MS_PER_MINUTE

    by_participant = defaultdict(list)
    for survey in surveys:
        by_participant[survey.participant_id].append(survey)
    survey_index = {}
    for pid, items in by_participant.items():
        items.sort(key=lambda s: (s.timestamp_ms, s.valence, s.arousal))
        survey_index[pid] = (np.array([s.timestamp_ms for s in items], dtype=np.int64), items)

    records, rows, unmatched = [], [], 0
    for session in sessions:
        times, items = survey_index.get(session.participant_id, (np.empty(0, dtype=np.int64), []))
        # Nearest survey at or after the session end is the first one in sorted order
        position = int(np.searchsorted(times, session.end_ms, side="left"))
        if position >= len(times) or times[position] - session.end_ms > window_ms:
            unmatched += 1
            continue
        survey = items[position]
        records.append((
            f"{session.participant_id}|{session.session_id}",
            session.participant_id,
            int(session.end_ms),
            policy.apply(survey.valence),
            policy.apply(survey.arousal),
            session.session_id,
            int(survey.timestamp_ms),
            int(survey.valence),
            int(survey.arousal),
        ))
        rows.append(session.features.values)

    order = sorted(range(len(records)), key=lambda i: (records[i][1], records[i][2], records[i][5]))
    meta = _meta_frame([records[i] for i in order],
                       ["session_id", "survey_timestamp_ms", "valence_score", "arousal_score"])
    features = np.array([rows[i] for i in order]).reshape(len(order), len(schema))
    logging.info(f"At-moment samples: {len(meta)} rows, {unmatched} sessions outside every {window_minutes}-minute window")
    return SampleSet(Horizon.AT_MOMENT, schema, features, meta, 0, {"unmatched_sessions": unmatched})


# =========================
# Daily epoch statistics
# =========================
def epoch_of(local_timestamp: pd.Timestamp):
    return local_timestamp.hour // 6


def local_day(timestamp_ms, tz_offset_minutes) -> date:
    return local_time(timestamp_ms, tz_offset_minutes).date()


def daily_schema(base: FeatureSchema) -> FeatureSchema:
    columns = []
    for name, group in base.columns:
        for epoch in EPOCHS:
            for stat in STATISTICS:
                columns.append((f"{name}@{epoch}:{stat}", group))
    return FeatureSchema(tuple(columns))


def daily_epoch_features(day_sessions: Sequence[FeaturizedSession]):
    """
    Eight statistics per base feature and epoch for one participant-day.

    Returns (values, mask) ordered feature -> epoch -> statistic. Cells of an
    epoch without sessions are NaN and flagged in the mask; they are imputed
    at training time. Quantiles interpolate linearly at rank (n-1)p and std
    uses the n-1 denominator (0 for a single session).
    """
    if not day_sessions:
        raise EmptyDay("No sessions on this day")
    schema = _check_schema(day_sessions)
    days = {local_day(s.start_ms, s.tz_offset_minutes) for s in day_sessions}
    if len(days) != 1:
        raise DataError(f"Sessions span {len(days)} local days, expected one")

    frame = pd.DataFrame(np.array([s.features.values for s in day_sessions]), columns=schema.names)
    frame["epoch"] = [epoch_of(local_time(s.start_ms, s.tz_offset_minutes)) for s in day_sessions]
    grouped = frame.groupby("epoch")
    epochs = range(len(EPOCHS))
    counts = grouped.size().reindex(epochs, fill_value=0)
    stats = {
        "min": grouped.min(),
        "max": grouped.max(),
        "mean": grouped.mean(),
        "median": grouped.median(),
        "sum": grouped.sum(),
        "std": grouped.std(ddof=1).fillna(0.0),
        "q1": grouped.quantile(0.25),
        "q3": grouped.quantile(0.75),
    }
    # (n_stats, n_epochs, n_features) -> (n_features, n_epochs, n_stats)
    cube = np.stack([stats[name].reindex(epochs)[schema.names].to_numpy(dtype=float) for name in STATISTICS])
    cube = cube.transpose(2, 1, 0)
    empty = (counts.to_numpy() == 0)
    cube[:, empty, :] = np.nan
    mask = np.broadcast_to(empty[None, :, None], cube.shape).ravel().copy()
    return cube.ravel(), mask


@dataclass(frozen=True, eq=False)
class DayFeatures:
    participant_id: str
    day: date
    tz_offset_minutes: int
    values: np.ndarray
    mask: np.ndarray
    n_sessions: int

    @property
    def start_ms(self):
        """Epoch milliseconds of the local midnight that opens this day"""
        midnight = pd.Timestamp(self.day).value // 1_000_000
        return int(midnight - self.tz_offset_minutes * MS_PER_MINUTE)


def build_day_features(sessions: Sequence[FeaturizedSession]) -> List[DayFeatures]:
    """Group sessions into participant local days (by session start) and compute epoch statistics"""
    _check_schema(sessions)
    buckets = defaultdict(list)
    for session in sessions:
        buckets[(session.participant_id, local_day(session.start_ms, session.tz_offset_minutes))].append(session)
    days = []
    for (pid, day), items in sorted(buckets.items()):
        values, mask = daily_epoch_features(items)
        days.append(DayFeatures(pid, day, items[0].tz_offset_minutes, values, mask, len(items)))
    logging.info(f"Built epoch statistics for {len(days)} participant-days")
    return days


@dataclass(frozen=True)
class DayLabel:
    participant_id: str
    day: date
    valence_mean: float
    arousal_mean: float
    n_surveys: int


def daily_labels(surveys: Sequence[SurveyResponse]) -> Dict[Tuple[str, date], DayLabel]:
    """Mean valence and arousal per participant local day"""
    buckets = defaultdict(list)
    for survey in surveys:
        buckets[(survey.participant_id, local_day(survey.timestamp_ms, survey.tz_offset_minutes))].append(survey)
    labels = {}
    for (pid, day), items in sorted(buckets.items()):
        labels[(pid, day)] = DayLabel(
            participant_id=pid,
            day=day,
            valence_mean=float(np.mean([s.valence for s in items])),
            arousal_mean=float(np.mean([s.arousal for s in items])),
            n_surveys=len(items),
        )
    return labels


def _day_schema(days: Sequence[DayFeatures], base_schema: FeatureSchema):
    schema = daily_schema(base_schema)
    for day in days:
        if len(day.values) != len(schema):
            raise SchemaMismatch(f"Day {day.participant_id}/{day.day} has {len(day.values)} columns, expected {len(schema)}")
    return schema


def daily_samples(days: Sequence[DayFeatures], surveys: Sequence[SurveyResponse], base_schema: FeatureSchema,
                  policy: LabelPolicy = DEFAULT_LABEL_POLICY):
    """One row per participant-day with data, labeled by the binarized daily mean mood"""
    schema = _day_schema(days, base_schema)
    labels = daily_labels(surveys)
    day_keys = {(d.participant_id, d.day) for d in days}

    records, rows, label_less = [], [], 0
    for day in sorted(days, key=lambda d: (d.participant_id, d.day)):
        label = labels.get((day.participant_id, day.day))
        if label is None:
            label_less += 1
            continue
        records.append((
            f"{day.participant_id}|{day.day.isoformat()}",
            day.participant_id,
            day.start_ms,
            policy.apply(label.valence_mean),
            policy.apply(label.arousal_mean),
            day.day.isoformat(),
            label.valence_mean,
            label.arousal_mean,
            label.n_surveys,
            day.n_sessions,
        ))
        rows.append(day.values)

    without_sessions = sum(1 for key in labels if key not in day_keys)
    meta = _meta_frame(records, ["day", "valence_mean", "arousal_mean", "n_surveys", "n_sessions"])
    features = np.array(rows).reshape(len(records), len(schema))
    logging.info(f"Daily samples: {len(meta)} rows, {label_less} days without a survey, "
                 f"{without_sessions} survey days without sessions")
    return SampleSet(Horizon.DAILY, schema, features, meta, 0,
                     {"label_less_days": label_less, "survey_days_without_sessions": without_sessions})


def next_day_samples(days: Sequence[DayFeatures], labels: Mapping[Tuple[str, date], DayLabel], lag_days,
                     base_schema: FeatureSchema, policy: LabelPolicy = DEFAULT_LABEL_POLICY):
    """
    Predict day T's mean mood from days T-lag .. T-1 (oldest first).

    Rows whose history misses any of those days are dropped and counted; gaps are never bridged.
    """
    if lag_days not in VALID_LAGS:
        raise OutOfRange(f"lag_days must be one of {VALID_LAGS}, got {lag_days}")
    day_schema = _day_schema(days, base_schema)
    parts = [day_schema.prefixed(f"lag{k}|") for k in range(lag_days, 0, -1)]
    schema = FeatureSchema(tuple(column for part in parts for column in part.columns))
    by_key = {(d.participant_id, d.day): d for d in days}

    records, rows, incomplete = [], [], 0
    for (pid, target_day), label in sorted(labels.items()):
        history = [by_key.get((pid, target_day - timedelta(days=k))) for k in range(lag_days, 0, -1)]
        if any(day is None for day in history):
            incomplete += 1
            continue
        last = history[-1]
        reference = last.start_ms + MS_PER_DAY
        records.append((
            f"{pid}|{target_day.isoformat()}",
            pid,
            reference,
            policy.apply(label.valence_mean),
            policy.apply(label.arousal_mean),
            target_day.isoformat(),
            label.valence_mean,
            label.arousal_mean,
            label.n_surveys,
        ))
        rows.append(np.concatenate([day.values for day in history]))

    meta = _meta_frame(records, ["day", "valence_mean", "arousal_mean", "n_surveys"])
    features = np.array(rows).reshape(len(records), len(schema))
    logging.info(f"Next-day samples (lag {lag_days}): {len(meta)} rows, {incomplete} rows with incomplete history")
    return SampleSet(Horizon.NEXT_DAY, schema, features, meta, lag_days, {"incomplete_lag_rows": incomplete})


# =========================
# Empty-epoch imputation
# =========================
def median_imputer():
    """Per-column median of the training partition; columns with no observed value fill with 0"""
    return SimpleImputer(strategy="median", keep_empty_features=True)


def imputation_mask(days: Sequence[DayFeatures]):
    """Epochs left empty (and therefore imputed) per participant-day, for the run manifest"""
    records = []
    for day in days:
        empty = day.mask.reshape(-1, len(EPOCHS), len(STATISTICS))[0, :, 0]
        if empty.any():
            records.append({
                "participant_id": day.participant_id,
                "day": day.day.isoformat(),
                "empty_epochs": [epoch for epoch, flag in zip(EPOCHS, empty) if flag],
            })
    return records
