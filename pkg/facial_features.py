#!/usr/bin/env python3
"""
Facial Behavior Features
========================

Turns capture sessions into the 40-dimensional session feature vector:

    12 AU intensities, 1 smile probability, 2 eye-open probabilities,
    3 head Euler angles, 2 eye aspect ratios, 10 IVA principal components
    and 10 mean IVA angular velocities.

Inter-vector angles (IVA) are measured at the facial centroid (mean of the
nose landmarks) between the rays to two landmarks of the same face region,
reduced with PCA and differentiated over the capture burst.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial import distance as dist

from errors import (
    DegenerateEye, DegenerateVector, DimensionMismatch, EmptySession,
    InsufficientData, NonMonotonicTime, OutOfRange, TooFewFrames, ZeroDt,
)
from mood_types import (
    DEFAULT_AU_IDS, REGIONS, FeatureGroup, FeatureSchema, FeatureVector,
    LandmarkLayout, Session, au_name,
)

DEFAULT_EAR_EPSILON = 1e-9
DEFAULT_N_COMPONENTS = 10
VECTOR_EPSILON = 1e-12
PCA_BATCH_ROWS = 4096


# =========================
# Geometry primitives
# =========================
def eye_aspect_ratio(p1, p2, p3, p4, p5, p6, eps=DEFAULT_EAR_EPSILON):
    """(|p2 - p6| + |p3 - p5|) / (2 |p1 - p4|); p1/p4 are the eye corners"""
    horizontal = dist.euclidean(p1, p4)
    if horizontal < eps:
        raise DegenerateEye(f"Eye corners coincide (|p1 - p4| = {horizontal:.3g})")
    return (dist.euclidean(p2, p6) + dist.euclidean(p3, p5)) / (2.0 * horizontal)


def eye_aspect_ratios(eye_points, eps=DEFAULT_EAR_EPSILON):
    """
    Vectorized EAR over frames.

    eye_points: (n_frames, 6, 2) array ordered p1..p6.
    Returns the EAR per frame and a boolean mask of frames whose eye is degenerate.
    """
    eye_points = np.asarray(eye_points, dtype=float)
    horizontal = np.linalg.norm(eye_points[:, 0] - eye_points[:, 3], axis=1)
    vertical = (
        np.linalg.norm(eye_points[:, 1] - eye_points[:, 5], axis=1)
        + np.linalg.norm(eye_points[:, 2] - eye_points[:, 4], axis=1)
    )
    degenerate = horizontal < eps
    ratios = np.divide(vertical, 2.0 * horizontal, out=np.zeros_like(vertical), where=~degenerate)
    return ratios, degenerate


def inter_vector_angle(c, a, b):
    """Angle in radians at c between the rays c->a and c->b"""
    u = np.asarray(a, dtype=float) - np.asarray(c, dtype=float)
    v = np.asarray(b, dtype=float) - np.asarray(c, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= VECTOR_EPSILON or nv <= VECTOR_EPSILON:
        raise DegenerateVector("Zero-length vector from the centroid")
    cosine = float(np.dot(u, v) / (nu * nv))
    return float(np.arccos(min(1.0, max(-1.0, cosine))))


# =========================
# Triangle specification
# =========================
@dataclass(frozen=True, eq=False)
class TriangleSpec:
    """Landmark pairs (i, j); each pair with the centroid forms one triangle"""
    pairs: np.ndarray
    centroid_indices: Tuple[int, ...]
    n_points: int = 133

    def __post_init__(self):
        pairs = np.array(self.pairs, dtype=int).reshape(-1, 2)
        if len(pairs) == 0:
            raise InsufficientData("TriangleSpec needs at least one landmark pair")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise OutOfRange("TriangleSpec pairs must join two different landmarks")
        if np.any(pairs < 0) or np.any(pairs >= self.n_points):
            raise OutOfRange("TriangleSpec pair index out of range")
        centroid = tuple(int(i) for i in self.centroid_indices)
        if not centroid or any(not 0 <= i < self.n_points for i in centroid):
            raise OutOfRange("Centroid indices out of range")
        pairs.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "centroid_indices", centroid)

    def __len__(self):
        return len(self.pairs)

    def digest(self):
        payload = ";".join(f"{i},{j}" for i, j in self.pairs.tolist())
        payload += "|centroid:" + ",".join(str(i) for i in self.centroid_indices)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_dict(self):
        return {"pairs": self.pairs.tolist(), "centroid_indices": list(self.centroid_indices)}


def default_triangle_spec(layout: LandmarkLayout, centroid_index: Optional[int] = None):
    """All unordered within-region landmark pairs, regions in canonical order"""
    pairs = []
    for region in REGIONS:
        indices = sorted(layout.region_map.get(region, ()))
        for a in range(len(indices)):
            for b in range(a + 1, len(indices)):
                pairs.append((indices[a], indices[b]))
    if centroid_index is None:
        centroid = tuple(sorted(layout.region_map["nose_center"]))
    else:
        centroid = (int(centroid_index),)
    return TriangleSpec(pairs=pairs, centroid_indices=centroid, n_points=layout.n_points)


def iva_matrix(landmark_stack, spec: TriangleSpec):
    """
    Inter-vector angles for a stack of frames.

    Returns (angles, degenerate, bad): angles is (n_frames, n_pairs), bad
    marks the pairs with a zero-length ray and degenerate the frames holding
    any such pair (their angles are NaN).
    """
    points = np.asarray(landmark_stack, dtype=float)
    if points.ndim == 2:
        points = points[None]
    centroid = points[:, list(spec.centroid_indices)].mean(axis=1, keepdims=True)
    u = points[:, spec.pairs[:, 0]] - centroid
    v = points[:, spec.pairs[:, 1]] - centroid
    nu = np.linalg.norm(u, axis=2)
    nv = np.linalg.norm(v, axis=2)
    bad = (nu <= VECTOR_EPSILON) | (nv <= VECTOR_EPSILON)
    with np.errstate(divide="ignore", invalid="ignore"):
        cosine = np.einsum("fpk,fpk->fp", u, v) / (nu * nv)
    angles = np.arccos(np.clip(cosine, -1.0, 1.0))
    degenerate = bad.any(axis=1)
    angles[degenerate] = np.nan
    return angles, degenerate, bad


def iva_raw(frame, spec: TriangleSpec):
    """One angle per spec pair, in spec order"""
    if frame.landmarks.shape[0] != spec.n_points:
        raise DimensionMismatch(f"Frame has {frame.landmarks.shape[0]} landmarks, spec expects {spec.n_points}")
    angles, degenerate, bad = iva_matrix(frame.landmarks, spec)
    if degenerate[0]:
        pair_index = int(np.flatnonzero(bad[0])[0])
        raise DegenerateVector(f"Zero-length vector in triangle pair {pair_index}", pair_index=pair_index)
    return angles[0]


# =========================
# PCA
# =========================
@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def __post_init__(self):
        for name in ("mean", "components", "explained_variance"):
            array = np.array(getattr(self, name), dtype=float)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def n_components(self):
        return self.components.shape[0]

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["mean"]), np.asarray(data["components"]), np.asarray(data["explained_variance"]))


def _model_from_covariance(mean, covariance, k):
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues, kind="stable")[::-1][:k]
    variance = np.clip(eigenvalues[order], 0.0, None)
    components = eigenvectors[:, order].T.copy()
    # Sign convention: the largest-magnitude entry of each component is positive
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=components, explained_variance=variance)


def fit_pca(rows, k=DEFAULT_N_COMPONENTS):
    """Mean-centred PCA keeping the top-k eigenvectors of the sample covariance"""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < k or rows.shape[1] < k:
        raise InsufficientData(f"PCA with k={k} needs at least {k} rows and {k} columns, got {rows.shape}")
    mean = rows.mean(axis=0)
    centred = rows - mean
    covariance = centred.T @ centred / max(rows.shape[0] - 1, 1)
    return _model_from_covariance(mean, covariance, k)


class PcaAccumulator:
    """Streams IVA rows into a covariance estimate so large cohorts never sit in memory at once"""

    def __init__(self, n_columns):
        self.n_columns = n_columns
        self.count = 0
        self.shift = None
        self.sum = np.zeros(n_columns)
        self.outer = np.zeros((n_columns, n_columns))

    def add(self, rows):
        rows = np.asarray(rows, dtype=float)
        if rows.size == 0:
            return
        if rows.shape[1] != self.n_columns:
            raise DimensionMismatch(f"Expected {self.n_columns} columns, got {rows.shape[1]}")
        if self.shift is None:
            self.shift = rows[0].copy()
        shifted = rows - self.shift
        self.sum += shifted.sum(axis=0)
        self.outer += shifted.T @ shifted
        self.count += rows.shape[0]

    def to_model(self, k=DEFAULT_N_COMPONENTS):
        if self.count < k or self.n_columns < k:
            raise InsufficientData(f"PCA with k={k} needs at least {k} rows, got {self.count}")
        centre = self.sum / self.count
        covariance = (self.outer - self.count * np.outer(centre, centre)) / max(self.count - 1, 1)
        covariance = (covariance + covariance.T) / 2.0
        return _model_from_covariance(self.shift + centre, covariance, k)


def project(model: PcaModel, v):
    """components . (v - mean); accepts one vector or a (n, dim) matrix"""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != model.mean.shape[0]:
        raise DimensionMismatch(f"Vector dimension {v.shape[-1]} does not match PCA mean dimension {model.mean.shape[0]}")
    return (v - model.mean) @ model.components.T


# =========================
# Angular kinematics
# =========================
def angular_kinematics(series, timestamps_ms):
    """
    Forward-difference angular velocity and acceleration (per second).

    Needs at least 2 frames; with exactly 2 the acceleration series is empty.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    times = np.asarray(timestamps_ms, dtype=float) / 1000.0
    if len(series) < 2:
        raise TooFewFrames(f"Angular velocity needs at least 2 frames, got {len(series)}")
    if len(times) != len(series):
        raise DimensionMismatch("One timestamp per frame is required")
    dt = np.diff(times)
    if np.any(dt < 0):
        raise NonMonotonicTime("Timestamps must increase")
    if np.any(dt == 0):
        raise ZeroDt("Two frames share a timestamp")
    velocity = np.diff(series, axis=0) / dt[:, None]
    acceleration = np.diff(velocity, axis=0) / dt[:-1, None] if len(velocity) >= 2 else np.empty((0, series.shape[1]))
    return velocity, acceleration


# =========================
# Session features
# =========================
def session_schema(au_ids=DEFAULT_AU_IDS, n_components=DEFAULT_N_COMPONENTS, include_acceleration=False):
    columns = [(au_name(a), FeatureGroup.ACTION_UNITS) for a in au_ids]
    columns.append(("smile_p", FeatureGroup.SMILING))
    columns += [("left_eye_open_p", FeatureGroup.EYE_OPEN), ("right_eye_open_p", FeatureGroup.EYE_OPEN)]
    columns += [(name, FeatureGroup.HEAD_EULER) for name in ("yaw", "pitch", "roll")]
    columns += [("ear_left", FeatureGroup.EYE_ASPECT_RATIO), ("ear_right", FeatureGroup.EYE_ASPECT_RATIO)]
    columns += [(f"iva_pc{i + 1:02d}", FeatureGroup.INTER_VECTOR_ANGLE) for i in range(n_components)]
    columns += [(f"iva_vel{i + 1:02d}", FeatureGroup.INTER_VECTOR_ANGLE) for i in range(n_components)]
    if include_acceleration:
        columns += [(f"iva_acc{i + 1:02d}", FeatureGroup.INTER_VECTOR_ANGLE) for i in range(n_components)]
    return FeatureSchema(tuple(columns))


def _usable_frames(session, spec, layout, ear_eps):
    """EARs, raw IVA rows and the mask of frames that survive EAR/IVA checks"""
    stack = session.landmark_stack()
    left, left_bad = eye_aspect_ratios(stack[:, list(layout.eye_index_spec["left_eye"])], ear_eps)
    right, right_bad = eye_aspect_ratios(stack[:, list(layout.eye_index_spec["right_eye"])], ear_eps)
    angles, iva_bad, _ = iva_matrix(stack, spec)
    keep = ~(left_bad | right_bad | iva_bad)
    return keep, np.column_stack([left, right]), angles


@dataclass(frozen=True)
class FeaturizedSession:
    participant_id: str
    session_id: str
    start_ms: int
    end_ms: int
    tz_offset_minutes: int
    features: FeatureVector


def session_features(session: Session, spec: TriangleSpec, pca: PcaModel, layout: Optional[LandmarkLayout] = None,
                     au_ids=DEFAULT_AU_IDS, include_acceleration=False, ear_eps=DEFAULT_EAR_EPSILON):
    """Per-channel means over the session's usable frames, as a grouped FeatureVector"""
    layout = layout or LandmarkLayout.default()
    keep, ears, angles = _usable_frames(session, spec, layout, ear_eps)
    skipped = int((~keep).sum())
    if skipped:
        logging.warning(f"Session {session.participant_id}/{session.session_id}: skipped {skipped} frame(s) failing EAR/IVA")
    if not keep.any():
        raise EmptySession(f"Session {session.participant_id}/{session.session_id} has no usable frame")

    frames = [frame for frame, ok in zip(session.frames, keep) if ok]
    au = np.array([[frame.au[a] for a in au_ids] for frame in frames])
    scalars = np.array([
        [frame.smile_p, frame.left_eye_open_p, frame.right_eye_open_p, frame.yaw, frame.pitch, frame.roll]
        for frame in frames
    ])
    projected = project(pca, angles[keep])
    k = pca.n_components

    # Kinematics need distinct timestamps; repeated stamps keep their first frame
    times = np.array([frame.timestamp_ms for frame in frames], dtype=np.int64)
    _, first = np.unique(times, return_index=True)
    velocity_mean = np.zeros(k)
    acceleration_mean = np.zeros(k)
    if len(first) >= 2:
        velocity, acceleration = angular_kinematics(projected[first], times[first])
        velocity_mean = velocity.mean(axis=0)
        if len(acceleration):
            acceleration_mean = acceleration.mean(axis=0)

    parts = [au.mean(axis=0), scalars.mean(axis=0), ears[keep].mean(axis=0), projected.mean(axis=0), velocity_mean]
    if include_acceleration:
        parts.append(acceleration_mean)
    schema = session_schema(au_ids, k, include_acceleration)
    return FeatureVector(np.concatenate(parts), schema)


def filter_low_quality_frames(session: Session, min_eye_open_p):
    """Drop frames whose mean eye-open probability is below the threshold; None if nothing remains"""
    if min_eye_open_p <= 0:
        return session
    frames = tuple(
        frame for frame in session.frames
        if (frame.left_eye_open_p + frame.right_eye_open_p) / 2.0 >= min_eye_open_p
    )
    if not frames:
        return None
    return Session(session.participant_id, session.session_id, frames, session.tz_offset_minutes)


# =========================
# Cohort-level featurization
# =========================
def fit_session_pca(sessions: Sequence[Session], spec: TriangleSpec, layout: Optional[LandmarkLayout] = None,
                    k=DEFAULT_N_COMPONENTS, ear_eps=DEFAULT_EAR_EPSILON):
    """PCA over the raw IVA rows of every usable frame in the given sessions"""
    layout = layout or LandmarkLayout.default()
    accumulator = PcaAccumulator(len(spec))
    buffered, n_buffered = [], 0
    for session in sessions:
        keep, _, angles = _usable_frames(session, spec, layout, ear_eps)
        buffered.append(angles[keep])
        n_buffered += int(keep.sum())
        if n_buffered >= PCA_BATCH_ROWS:
            accumulator.add(np.vstack(buffered))
            buffered, n_buffered = [], 0
    if buffered:
        accumulator.add(np.vstack(buffered))
    logging.info(f"Fitting IVA PCA on {accumulator.count} frames x {len(spec)} triangle pairs")
    return accumulator.to_model(k)


class SessionFeaturizer:
    """Featurizes many sessions with one fixed configuration"""

    def __init__(self, spec: TriangleSpec, pca: PcaModel, layout: Optional[LandmarkLayout] = None,
                 au_ids=DEFAULT_AU_IDS, include_acceleration=False, ear_eps=DEFAULT_EAR_EPSILON):
        self.spec = spec
        self.pca = pca
        self.layout = layout or LandmarkLayout.default()
        self.au_ids = tuple(au_ids)
        self.include_acceleration = include_acceleration
        self.ear_eps = ear_eps
        self.empty_sessions = 0

    @property
    def schema(self):
        return session_schema(self.au_ids, self.pca.n_components, self.include_acceleration)

    def featurize_one(self, session: Session) -> Optional[FeaturizedSession]:
        try:
            vector = session_features(session, self.spec, self.pca, self.layout, self.au_ids,
                                      self.include_acceleration, self.ear_eps)
        except EmptySession as e:
            logging.warning(str(e))
            return None
        return FeaturizedSession(
            participant_id=session.participant_id,
            session_id=session.session_id,
            start_ms=session.start_ms,
            end_ms=session.end_ms,
            tz_offset_minutes=session.tz_offset_minutes,
            features=vector,
        )

    def _featurize_chunk(self, chunk):
        return [self.featurize_one(session) for session in chunk]

    def featurize(self, sessions: Sequence[Session], n_jobs=1) -> List[FeaturizedSession]:
        """Featurize in parallel; output order is (participant_id, session_id) regardless of scheduling"""
        ordered = sorted(sessions, key=lambda s: (s.participant_id, s.session_id))
        if n_jobs == 1 or len(ordered) < 2:
            results = self._featurize_chunk(ordered)
        else:
            n_chunks = max(1, min(len(ordered), 4 * abs(n_jobs)))
            chunks = [ordered[i::n_chunks] for i in range(n_chunks)]
            parts = Parallel(n_jobs=n_jobs)(delayed(self._featurize_chunk)(chunk) for chunk in chunks)
            results = [item for part in parts for item in part]
        featurized = [item for item in results if item is not None]
        self.empty_sessions = len(results) - len(featurized)
        featurized.sort(key=lambda f: (f.participant_id, f.session_id))
        logging.info(f"Featurized {len(featurized)} sessions ({self.empty_sessions} without usable frames)")
        return featurized
