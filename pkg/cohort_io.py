#!/usr/bin/env python3
"""
Cohort File Formats
===================

Sessions are JSON Lines, one frame record per line:

    participant_id, session_id, timestamp_ms, tz_offset_minutes, au[12],
    smile_p, left_eye_open_p, right_eye_open_p, yaw, pitch, roll,
    landmarks[133][2]

Surveys are CSV with the header
participant_id,timestamp_ms,tz_offset_minutes,valence,arousal.

Every reader reports problems as DataError located by file and line.
JSON output uses sorted keys so files are byte-stable across runs.
"""

import hashlib
import json
import logging
import os
from collections import OrderedDict
from pathlib import Path

import numpy as np
import pandas as pd

from errors import DataError, IoError, MoodCamError
from mood_types import (
    DEFAULT_AU_IDS, N_LANDMARKS, Session, serialize_frame, validate_frame, validate_survey,
)

SURVEY_COLUMNS = ("participant_id", "timestamp_ms", "tz_offset_minutes", "valence", "arousal")
SESSIONS_FILE = "sessions.jsonl"
SURVEYS_FILE = "surveys.csv"
MANIFEST_FILE = "manifest.json"


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps(obj, indent=2):
    return json.dumps(obj, sort_keys=True, indent=indent, default=_json_default, allow_nan=False)


def ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise IoError(f"Cannot create directory {path}: {e}")
    return Path(path)


def write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}")
    return Path(path)


def write_json(obj, path):
    return write_text(path, dumps(obj) + "\n")


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as e:
        raise IoError(f"Cannot read {path}: {e}")
    except json.JSONDecodeError as e:
        raise DataError(f"Invalid JSON: {e.msg}", path, e.lineno)


def file_digest(path):
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as handle:
            for block in iter(lambda: handle.read(1 << 20), b""):
                digest.update(block)
    except OSError as e:
        raise IoError(f"Cannot read {path}: {e}")
    return digest.hexdigest()


# =========================
# Sessions
# =========================
def read_sessions(path, au_ids=DEFAULT_AU_IDS, n_landmarks=N_LANDMARKS):
    """
    Stream-parse a JSON Lines frame file and group frames into sessions.

    Frames of a session keep file order; a frame earlier than its
    predecessor is reported with its line number.
    """
    grouped = OrderedDict()
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise IoError(f"Cannot read {path}: {e}")
    with handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"Invalid JSON: {e.msg}", path, line_no)
            if not isinstance(record, dict):
                raise DataError("Frame record must be a JSON object", path, line_no)
            try:
                participant_id = str(record["participant_id"])
                session_id = str(record["session_id"])
                tz_offset = int(record.get("tz_offset_minutes", 0))
                frame = validate_frame(record, au_ids, n_landmarks, where="frame")
            except KeyError as e:
                raise DataError(f"MissingChannel: missing field {e}", path, line_no)
            except (MoodCamError, TypeError, ValueError) as e:
                raise DataError(f"{type(e).__name__}: {e}", path, line_no)

            key = (participant_id, session_id)
            entry = grouped.get(key)
            if entry is None:
                grouped[key] = entry = {"tz": tz_offset, "frames": []}
            elif entry["tz"] != tz_offset:
                raise DataError(f"Session {participant_id}/{session_id} changes tz_offset_minutes", path, line_no)
            if entry["frames"] and frame.timestamp_ms < entry["frames"][-1].timestamp_ms:
                raise DataError(f"NonMonotonicTime: frame at {frame.timestamp_ms} precedes the previous frame of "
                                f"session {participant_id}/{session_id}", path, line_no)
            entry["frames"].append(frame)

    sessions = [
        Session(participant_id=pid, session_id=sid, frames=tuple(entry["frames"]), tz_offset_minutes=entry["tz"])
        for (pid, sid), entry in grouped.items()
    ]
    logging.info(f"Loaded {len(sessions)} sessions ({sum(len(s.frames) for s in sessions)} frames) from {path}")
    return sessions


def write_sessions(sessions, path, au_ids=DEFAULT_AU_IDS):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for session in sessions:
                for frame in session.frames:
                    handle.write(json.dumps(serialize_frame(frame, session, au_ids), sort_keys=True,
                                            separators=(",", ":")))
                    handle.write("\n")
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}")
    return Path(path)


# =========================
# Surveys
# =========================
def read_surveys(path):
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except OSError as e:
        raise IoError(f"Cannot read {path}: {e}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Unreadable CSV: {e}", path, 1)
    missing = [c for c in SURVEY_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"Survey header is missing columns {missing}", path, 1)

    surveys = []
    for i, row in enumerate(frame[list(SURVEY_COLUMNS)].to_dict(orient="records")):
        line_no = i + 2
        try:
            surveys.append(validate_survey(row, where="survey"))
        except MoodCamError as e:
            raise DataError(f"{type(e).__name__}: {e}", path, line_no)
    logging.info(f"Loaded {len(surveys)} surveys from {path}")
    return surveys


def write_surveys(surveys, path):
    frame = pd.DataFrame(
        [(s.participant_id, s.timestamp_ms, s.tz_offset_minutes, s.valence, s.arousal) for s in surveys],
        columns=list(SURVEY_COLUMNS),
    )
    try:
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}")
    return Path(path)


def write_table(frame: pd.DataFrame, path):
    try:
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}")
    return Path(path)


# =========================
# Cohort directories
# =========================
def write_cohort(cohort, out_dir, au_ids=DEFAULT_AU_IDS):
    """Write sessions.jsonl, surveys.csv and manifest.json; returns their paths"""
    out = ensure_dir(out_dir)
    paths = {
        "sessions": write_sessions(cohort.sessions, out / SESSIONS_FILE, au_ids),
        "surveys": write_surveys(cohort.surveys, out / SURVEYS_FILE),
        "manifest": write_json(cohort.manifest, out / MANIFEST_FILE),
    }
    for name, path in paths.items():
        logging.info(f"Wrote {name}: {path} (sha256 {file_digest(path)[:12]})")
    return paths
