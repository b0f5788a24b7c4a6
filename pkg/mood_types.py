#!/usr/bin/env python3
"""
MoodCam Core Types
==================

Canonical data model for the mood-inference pipeline: per-frame facial
behavior records, capture sessions, Circumplex mood surveys, grouped feature
vectors and labeled sample sets.

Every type is immutable after construction (numpy buffers are marked
read-only) so featurized data can be shared across parallel workers.
"""

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import DataError, MissingChannel, NonMonotonicTime, OutOfRange, SchemaMismatch

# =========================
# Global Configuration
# =========================
# AU ids reported upstream; the 12th slot is configurable (see config.features.au_ids)
DEFAULT_AU_IDS = (1, 2, 4, 6, 7, 10, 12, 14, 17, 23, 24, 25)
N_LANDMARKS = 133
CHANNEL_COUNT = 12 + 1 + 2 + 3 + N_LANDMARKS  # 151
SCORE_MIN, SCORE_MAX = -4, 4
HEAD_ANGLE_LIMIT = 180.0

REGIONS = (
    "nose_center", "jawline", "left_eyebrow", "left_eye",
    "right_eyebrow", "right_eye", "mouth", "cheeks",
)

# Default 133-point layout: face oval 36, 2 x eyebrow 10, 2 x eye 16, mouth 38, nose 5, cheeks 2
DEFAULT_REGION_SIZES = (
    ("jawline", 36),
    ("left_eyebrow", 10),
    ("right_eyebrow", 10),
    ("left_eye", 16),
    ("right_eye", 16),
    ("mouth", 38),
    ("nose_center", 5),
    ("cheeks", 2),
)

# Offsets into a 16-point eye contour (index k sits at angle 2*pi*k/16):
# p1 and p4 are the corners, (p2, p6) and (p3, p5) the vertical pairs.
EYE_CONTOUR_EAR_OFFSETS = (8, 5, 3, 0, 13, 11)

FRAME_SCALAR_CHANNELS = ("smile_p", "left_eye_open_p", "right_eye_open_p", "yaw", "pitch", "roll")
PROBABILITY_CHANNELS = ("smile_p", "left_eye_open_p", "right_eye_open_p")


def au_name(au_id):
    return f"AU{int(au_id):02d}"


def local_time(timestamp_ms, tz_offset_minutes):
    """Local wall-clock time for an epoch timestamp and a fixed UTC offset"""
    return pd.Timestamp(int(timestamp_ms) + int(tz_offset_minutes) * 60_000, unit="ms")


def _frozen(array, dtype=float):
    out = np.array(array, dtype=dtype)
    out.setflags(write=False)
    return out


# =========================
# Landmarks
# =========================
@dataclass(frozen=True)
class LandmarkLayout:
    """Assignment of the 133 landmark indices to regions, plus the EAR points per eye"""
    region_map: Mapping[str, Tuple[int, ...]]
    eye_index_spec: Mapping[str, Tuple[int, ...]]
    n_points: int = N_LANDMARKS

    def __post_init__(self):
        seen = {}
        for region, indices in self.region_map.items():
            if region not in REGIONS:
                raise OutOfRange(f"Unknown landmark region '{region}'")
            for idx in indices:
                if not 0 <= idx < self.n_points:
                    raise OutOfRange(f"Landmark index {idx} of region '{region}' out of range")
                if idx in seen:
                    raise OutOfRange(f"Landmark index {idx} assigned to both '{seen[idx]}' and '{region}'")
                seen[idx] = region
        if len(seen) != self.n_points:
            missing = sorted(set(range(self.n_points)) - set(seen))
            raise MissingChannel(f"Landmark indices without a region: {missing[:10]}")
        for eye in ("left_eye", "right_eye"):
            points = self.eye_index_spec.get(eye)
            if points is None or len(points) != 6:
                raise MissingChannel(f"eye_index_spec['{eye}'] must list exactly 6 indices")
            if len(set(points)) != 6:
                raise OutOfRange(f"eye_index_spec['{eye}'] indices must be distinct")
            if any(not 0 <= idx < self.n_points for idx in points):
                raise OutOfRange(f"eye_index_spec['{eye}'] index out of range")
        object.__setattr__(self, "region_map", {k: tuple(v) for k, v in self.region_map.items()})
        object.__setattr__(self, "eye_index_spec", {k: tuple(v) for k, v in self.eye_index_spec.items()})

    def region_of(self, index):
        for region, indices in self.region_map.items():
            if index in indices:
                return region
        raise OutOfRange(f"Landmark index {index} out of range")

    @classmethod
    def default(cls):
        region_map = {}
        start = 0
        for region, size in DEFAULT_REGION_SIZES:
            region_map[region] = tuple(range(start, start + size))
            start += size
        eye_index_spec = {
            eye: tuple(region_map[eye][k] for k in EYE_CONTOUR_EAR_OFFSETS)
            for eye in ("left_eye", "right_eye")
        }
        return cls(region_map=region_map, eye_index_spec=eye_index_spec)

    @classmethod
    def from_dict(cls, data):
        return cls(
            region_map={k: tuple(int(i) for i in v) for k, v in data["region_map"].items()},
            eye_index_spec={k: tuple(int(i) for i in v) for k, v in data["eye_index_spec"].items()},
        )


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    points: np.ndarray
    layout: LandmarkLayout

    def __post_init__(self):
        points = _frozen(self.points)
        if points.shape != (self.layout.n_points, 2):
            raise MissingChannel(f"Expected {self.layout.n_points} landmark points, got shape {points.shape}")
        object.__setattr__(self, "points", points)

    def eye_points(self, eye):
        return self.points[list(self.layout.eye_index_spec[eye])]


# =========================
# Frames, sessions and surveys
# =========================
@dataclass(frozen=True, eq=False)
class FrameDescriptor:
    """One camera frame: the 151-channel record"""
    timestamp_ms: int
    au: Mapping[int, float]
    smile_p: float
    left_eye_open_p: float
    right_eye_open_p: float
    head: Tuple[float, float, float]
    landmarks: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "au", dict(self.au))
        object.__setattr__(self, "head", tuple(float(v) for v in self.head))
        object.__setattr__(self, "landmarks", _frozen(self.landmarks))

    @property
    def yaw(self):
        return self.head[0]

    @property
    def pitch(self):
        return self.head[1]

    @property
    def roll(self):
        return self.head[2]

    def __eq__(self, other):
        if not isinstance(other, FrameDescriptor):
            return NotImplemented
        return (
            self.timestamp_ms == other.timestamp_ms
            and dict(self.au) == dict(other.au)
            and (self.smile_p, self.left_eye_open_p, self.right_eye_open_p) ==
                (other.smile_p, other.left_eye_open_p, other.right_eye_open_p)
            and self.head == other.head
            and np.array_equal(self.landmarks, other.landmarks)
        )


@dataclass(frozen=True)
class Session:
    """A timestamped capture burst for one participant"""
    participant_id: str
    session_id: str
    frames: Tuple[FrameDescriptor, ...]
    tz_offset_minutes: int = 0

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def start_ms(self):
        return self.frames[0].timestamp_ms

    @property
    def end_ms(self):
        return self.frames[-1].timestamp_ms

    @property
    def key(self):
        return (self.participant_id, self.session_id)

    def landmark_stack(self):
        return np.stack([frame.landmarks for frame in self.frames])

    def timestamps(self):
        return np.array([frame.timestamp_ms for frame in self.frames], dtype=np.int64)


@dataclass(frozen=True)
class SurveyResponse:
    """One Circumplex mood report"""
    participant_id: str
    timestamp_ms: int
    valence: int
    arousal: int
    tz_offset_minutes: int = 0

    def __post_init__(self):
        for name in ("valence", "arousal"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or not SCORE_MIN <= value <= SCORE_MAX:
                raise OutOfRange(f"{name} must be an integer in [{SCORE_MIN}, {SCORE_MAX}], got {value!r}")


# =========================
# Validation and serialization
# =========================
def _require(record, key, where):
    if key not in record or record[key] is None:
        raise MissingChannel(f"{where}: missing channel '{key}'")
    return record[key]


def _finite(value, name, where):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise OutOfRange(f"{where}: channel '{name}' is not numeric ({value!r})")
    if not math.isfinite(value):
        raise OutOfRange(f"{where}: channel '{name}' is not finite")
    return value


def _unit_interval(value, name, where):
    value = _finite(value, name, where)
    if not 0.0 <= value <= 1.0:
        raise OutOfRange(f"{where}: channel '{name}' = {value} outside [0, 1]")
    return value


def _parse_au(raw_au, au_ids, where):
    if isinstance(raw_au, Mapping):
        keyed = {}
        for key, value in raw_au.items():
            try:
                au_id = int(str(key).upper().replace("AU", ""))
            except ValueError:
                raise OutOfRange(f"{where}: '{key}' is not an action unit id")
            keyed[au_id] = value
        missing = [au_name(a) for a in au_ids if a not in keyed]
        if missing:
            raise MissingChannel(f"{where}: missing action units {missing}")
        values = [keyed[a] for a in au_ids]
    else:
        if not isinstance(raw_au, (list, tuple)):
            raise MissingChannel(f"{where}: 'au' must be a list or an id-keyed object")
        values = list(raw_au)
        if len(values) != len(au_ids):
            raise MissingChannel(f"{where}: expected {len(au_ids)} AU intensities, got {len(values)}")
    return {a: _unit_interval(v, au_name(a), where) for a, v in zip(au_ids, values)}


def validate_frame(raw_frame, au_ids=DEFAULT_AU_IDS, n_landmarks=N_LANDMARKS, where="frame"):
    timestamp = _require(raw_frame, "timestamp_ms", where)
    if isinstance(timestamp, bool) or int(timestamp) != timestamp:
        raise OutOfRange(f"{where}: timestamp_ms must be an integer")
    au = _parse_au(_require(raw_frame, "au", where), au_ids, where)
    probabilities = {name: _unit_interval(_require(raw_frame, name, where), name, where) for name in PROBABILITY_CHANNELS}
    head = []
    for name in ("yaw", "pitch", "roll"):
        angle = _finite(_require(raw_frame, name, where), name, where)
        if abs(angle) > HEAD_ANGLE_LIMIT:
            raise OutOfRange(f"{where}: head angle '{name}' = {angle} outside [-180, 180]")
        head.append(angle)
    raw_landmarks = _require(raw_frame, "landmarks", where)
    try:
        landmarks = np.asarray(raw_landmarks, dtype=float)
    except (TypeError, ValueError):
        raise MissingChannel(f"{where}: landmarks are not a numeric {n_landmarks}x2 array")
    if landmarks.shape != (n_landmarks, 2):
        raise MissingChannel(f"{where}: expected {n_landmarks} landmarks, got shape {landmarks.shape}")
    if not np.all(np.isfinite(landmarks)):
        raise OutOfRange(f"{where}: landmarks contain non-finite coordinates")
    return FrameDescriptor(
        timestamp_ms=int(timestamp),
        au=au,
        head=tuple(head),
        landmarks=landmarks,
        **probabilities,
    )


def validate_session(raw_record, au_ids=DEFAULT_AU_IDS, n_landmarks=N_LANDMARKS):
    """
    Build a Session from a raw record, rejecting anything that breaks an invariant.

    The raw record carries participant_id, session_id, tz_offset_minutes and a
    'frames' list of per-frame dicts (the JSON Lines frame layout).
    """
    participant_id = str(_require(raw_record, "participant_id", "session"))
    session_id = str(_require(raw_record, "session_id", "session"))
    where = f"session {participant_id}/{session_id}"
    tz_offset = int(raw_record.get("tz_offset_minutes", 0))
    raw_frames = raw_record.get("frames") or []
    if not raw_frames:
        raise MissingChannel(f"{where}: session has no frames")

    frames = []
    for i, raw_frame in enumerate(raw_frames):
        frame_where = f"{where} frame {i}"
        frame_pid = raw_frame.get("participant_id", participant_id)
        if str(frame_pid) != participant_id:
            raise DataError(f"{frame_where}: participant '{frame_pid}' differs from session participant '{participant_id}'")
        frames.append(validate_frame(raw_frame, au_ids, n_landmarks, frame_where))

    for i in range(1, len(frames)):
        if frames[i].timestamp_ms < frames[i - 1].timestamp_ms:
            raise NonMonotonicTime(
                f"{where}: frame {i} at {frames[i].timestamp_ms} precedes frame {i - 1} at {frames[i - 1].timestamp_ms}"
            )
    return Session(participant_id=participant_id, session_id=session_id, frames=tuple(frames), tz_offset_minutes=tz_offset)


def serialize_frame(frame, session, au_ids=DEFAULT_AU_IDS):
    return {
        "participant_id": session.participant_id,
        "session_id": session.session_id,
        "timestamp_ms": int(frame.timestamp_ms),
        "tz_offset_minutes": int(session.tz_offset_minutes),
        "au": [float(frame.au[a]) for a in au_ids],
        "smile_p": float(frame.smile_p),
        "left_eye_open_p": float(frame.left_eye_open_p),
        "right_eye_open_p": float(frame.right_eye_open_p),
        "yaw": float(frame.yaw),
        "pitch": float(frame.pitch),
        "roll": float(frame.roll),
        "landmarks": frame.landmarks.tolist(),
    }


def serialize_session(session, au_ids=DEFAULT_AU_IDS):
    return {
        "participant_id": session.participant_id,
        "session_id": session.session_id,
        "tz_offset_minutes": int(session.tz_offset_minutes),
        "frames": [serialize_frame(frame, session, au_ids) for frame in session.frames],
    }


def validate_survey(raw_row, where="survey"):
    participant_id = str(_require(raw_row, "participant_id", where))
    values = {}
    for name in ("timestamp_ms", "tz_offset_minutes", "valence", "arousal"):
        raw = _require(raw_row, name, where)
        try:
            number = float(raw)
        except (TypeError, ValueError):
            raise OutOfRange(f"{where}: '{name}' is not numeric ({raw!r})")
        if not math.isfinite(number) or number != int(number):
            raise OutOfRange(f"{where}: '{name}' must be an integer, got {raw!r}")
        values[name] = int(number)
    return SurveyResponse(participant_id=participant_id, **values)


# =========================
# Feature schema and vectors
# =========================
class FeatureGroup(str, Enum):
    EYE_OPEN = "eye_open"
    SMILING = "smiling"
    HEAD_EULER = "head_euler"
    ACTION_UNITS = "action_units"
    EYE_ASPECT_RATIO = "eye_aspect_ratio"
    INTER_VECTOR_ANGLE = "inter_vector_angle"

    @property
    def label(self):
        return GROUP_LABELS[self]


# Row order of the ablation table
GROUP_ORDER = (
    FeatureGroup.EYE_OPEN,
    FeatureGroup.SMILING,
    FeatureGroup.HEAD_EULER,
    FeatureGroup.ACTION_UNITS,
    FeatureGroup.EYE_ASPECT_RATIO,
    FeatureGroup.INTER_VECTOR_ANGLE,
)

GROUP_LABELS = {
    FeatureGroup.EYE_OPEN: "Eye Open",
    FeatureGroup.SMILING: "Smiling",
    FeatureGroup.HEAD_EULER: "Head Euler Angle",
    FeatureGroup.ACTION_UNITS: "Action Units",
    FeatureGroup.EYE_ASPECT_RATIO: "Eye Aspect Ratios",
    FeatureGroup.INTER_VECTOR_ANGLE: "Inter-Vector Angles",
}


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered (feature_name, feature_group) pairs; groups partition the columns"""
    columns: Tuple[Tuple[str, FeatureGroup], ...]

    def __post_init__(self):
        columns = tuple((str(name), FeatureGroup(group)) for name, group in self.columns)
        names = [name for name, _ in columns]
        if len(set(names)) != len(names):
            raise SchemaMismatch("Feature names must be unique")
        object.__setattr__(self, "columns", columns)

    def __len__(self):
        return len(self.columns)

    @property
    def names(self):
        return [name for name, _ in self.columns]

    @property
    def groups(self):
        return [group for _, group in self.columns]

    def group_sizes(self):
        sizes = {group: 0 for group in GROUP_ORDER}
        for _, group in self.columns:
            sizes[group] += 1
        return sizes

    def indices_of(self, group):
        group = FeatureGroup(group)
        return np.array([i for i, (_, g) in enumerate(self.columns) if g == group], dtype=int)

    def indices_without(self, group):
        group = FeatureGroup(group)
        return np.array([i for i, (_, g) in enumerate(self.columns) if g != group], dtype=int)

    def subset(self, indices):
        return FeatureSchema(tuple(self.columns[i] for i in indices))

    def prefixed(self, prefix):
        return FeatureSchema(tuple((f"{prefix}{name}", group) for name, group in self.columns))

    def digest(self):
        payload = "\n".join(f"{name}\t{group.value}" for name, group in self.columns)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    schema: FeatureSchema

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 1 or len(values) != len(self.schema):
            raise SchemaMismatch(f"Feature vector length {values.shape} does not match schema length {len(self.schema)}")
        object.__setattr__(self, "values", values)

    def as_dict(self):
        return dict(zip(self.schema.names, self.values.tolist()))


# =========================
# Labeled sample sets
# =========================
class Horizon(str, Enum):
    AT_MOMENT = "at_moment"
    DAILY = "daily"
    NEXT_DAY = "next_day"


VALID_LAGS = (1, 2, 4, 8)
TARGETS = ("valence", "arousal")
META_COLUMNS = ("row_id", "participant_id", "reference_time", "valence_label", "arousal_label")


@dataclass(frozen=True)
class SampleRow:
    participant_id: str
    reference_time: int
    features: FeatureVector
    valence_label: int
    arousal_label: int


@dataclass(frozen=True, eq=False)
class SampleSet:
    """
    A labeled feature matrix for one prediction horizon.

    features holds one row per sample (NaN marks a masked daily-epoch cell);
    meta holds row_id, participant_id, reference_time (epoch ms), the two
    binary labels and any audit columns the builder attached.
    """
    horizon: Horizon
    schema: FeatureSchema
    features: np.ndarray
    meta: pd.DataFrame
    lag_days: int = 0
    dropped: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        horizon = Horizon(self.horizon)
        object.__setattr__(self, "horizon", horizon)
        features = np.array(self.features, dtype=float).reshape(len(self.meta), len(self.schema))
        features.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "dropped", dict(self.dropped))
        for column in META_COLUMNS:
            if column not in self.meta.columns:
                raise SchemaMismatch(f"SampleSet meta is missing column '{column}'")
        for target in TARGETS:
            labels = self.meta[f"{target}_label"]
            if len(labels) and not labels.isin([0, 1]).all():
                raise OutOfRange(f"{target} labels must be binary")
        if horizon == Horizon.NEXT_DAY:
            if self.lag_days not in VALID_LAGS:
                raise OutOfRange(f"lag_days must be one of {VALID_LAGS} for next_day, got {self.lag_days}")
        elif self.lag_days != 0:
            raise OutOfRange(f"lag_days must be 0 for {horizon.value}")

    def __len__(self):
        return len(self.meta)

    @property
    def name(self):
        if self.horizon == Horizon.NEXT_DAY:
            return f"next_day_lag{self.lag_days}"
        return self.horizon.value

    @property
    def participants(self):
        return self.meta["participant_id"].to_numpy(dtype=str)

    @property
    def row_ids(self):
        return self.meta["row_id"].to_numpy(dtype=str)

    def labels(self, target):
        if target not in TARGETS:
            raise OutOfRange(f"Unknown target '{target}'")
        return self.meta[f"{target}_label"].to_numpy(dtype=int)

    def mask(self):
        return np.isnan(self.features)

    def rows(self) -> Iterator[SampleRow]:
        for i, record in enumerate(self.meta.itertuples(index=False)):
            yield SampleRow(
                participant_id=record.participant_id,
                reference_time=int(record.reference_time),
                features=FeatureVector(self.features[i], self.schema),
                valence_label=int(record.valence_label),
                arousal_label=int(record.arousal_label),
            )

    def select_columns(self, indices):
        indices = np.asarray(indices, dtype=int)
        return SampleSet(
            horizon=self.horizon,
            schema=self.schema.subset(indices),
            features=self.features[:, indices],
            meta=self.meta,
            lag_days=self.lag_days,
            dropped=dict(self.dropped),
        )

    def with_labels(self, target, labels):
        meta = self.meta.copy()
        meta[f"{target}_label"] = np.asarray(labels, dtype=int)
        return SampleSet(self.horizon, self.schema, self.features, meta, self.lag_days, dict(self.dropped))

    def to_frame(self):
        frame = pd.DataFrame(self.features, columns=self.schema.names)
        return pd.concat([self.meta.reset_index(drop=True), frame], axis=1)
