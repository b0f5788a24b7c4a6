#!/usr/bin/env python3
"""
Synthetic Cohort Generator
==========================

Deterministic stand-in for a phone-camera mood study. Each participant gets a
latent valence/arousal trajectory (a daily AR(1) baseline plus a bounded,
mean-reverting intraday random walk), three scheduled Circumplex surveys per
day and Poisson-distributed capture sessions. Frame channels are baseline
noise plus mood-conditioned shifts whose strength per feature group comes
from `signal_spec`; landmarks are a jittered face template whose mouth
corners and eye openings follow the latent mood.

The manifest records the latent states so tests can check features against
ground truth.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta
from typing import Dict, List, Mapping, Tuple

import numpy as np
from joblib import Parallel, delayed

from errors import InvalidConfig
from mood_types import (
    DEFAULT_AU_IDS, DEFAULT_REGION_SIZES, EYE_CONTOUR_EAR_OFFSETS, SCORE_MAX, SCORE_MIN,
    FeatureGroup, FrameDescriptor, Session, SurveyResponse,
)

MS_PER_MINUTE = 60_000
MS_PER_DAY = 86_400_000
GRID_MINUTES = 15
GRID_STEPS = 24 * 60 // GRID_MINUTES

# Latent mood dynamics
LATENT_CENTER = -0.5
PARTICIPANT_SD = 0.5
DAILY_PERSISTENCE = 0.6
DAILY_SD = 0.8
INTRADAY_SD = 0.15
INTRADAY_REVERSION = 0.05

TZ_OFFSETS = (-480, -420, -360, -300, -240, 0, 60, 120, 330, 540)
FRAME_SPACING_MS = 2000


@dataclass(frozen=True)
class CohortConfig:
    n_participants: int = 25
    n_days: int = 28
    sessions_per_day: float = 23.0
    surveys_per_day: int = 3
    survey_jitter_minutes: int = 45
    survey_compliance: float = 0.75
    signal_spec: Mapping[str, float] = field(default_factory=lambda: {"smiling": 1.0, "action_units": 1.0})
    missing_day_rate: float = 0.1
    frames_per_session: int = 4
    night_session_rate: float = 0.05
    start_date: str = "2023-03-06"
    au_ids: Tuple[int, ...] = DEFAULT_AU_IDS
    seed: int = 7

    def __post_init__(self):
        for name in ("n_participants", "n_days", "surveys_per_day", "frames_per_session"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {value!r}")
        if not (math.isfinite(self.sessions_per_day) and self.sessions_per_day > 0):
            raise InvalidConfig(f"sessions_per_day must be positive, got {self.sessions_per_day!r}")
        if self.survey_jitter_minutes < 0:
            raise InvalidConfig("survey_jitter_minutes must be >= 0")
        if not 0 < self.survey_compliance <= 1:
            raise InvalidConfig("survey_compliance must lie in (0, 1]")
        for name in ("missing_day_rate", "night_session_rate"):
            if not 0 <= getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must lie in [0, 1)")
        valid_groups = {g.value for g in FeatureGroup}
        spec = {}
        for group, effect in dict(self.signal_spec).items():
            if group not in valid_groups:
                raise InvalidConfig(f"signal_spec names unknown feature group '{group}'")
            if not math.isfinite(float(effect)):
                raise InvalidConfig(f"signal_spec effect for '{group}' must be finite")
            spec[group] = float(effect)
        object.__setattr__(self, "signal_spec", spec)
        object.__setattr__(self, "au_ids", tuple(int(a) for a in self.au_ids))
        try:
            date.fromisoformat(self.start_date)
        except ValueError:
            raise InvalidConfig(f"start_date must be an ISO date, got {self.start_date!r}")

    def effect(self, group):
        return self.signal_spec.get(FeatureGroup(group).value, 0.0)

    def survey_hours(self):
        if self.surveys_per_day == 1:
            return [10.0]
        return list(np.linspace(10.0, 20.0, self.surveys_per_day))

    def to_dict(self):
        data = asdict(self)
        data["signal_spec"] = dict(sorted(self.signal_spec.items()))
        data["au_ids"] = list(self.au_ids)
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"Unknown cohort settings: {sorted(unknown)}")
        if "au_ids" in data:
            data["au_ids"] = tuple(data["au_ids"])
        return cls(**data)


@dataclass
class Cohort:
    sessions: List[Session]
    surveys: List[SurveyResponse]
    manifest: Dict


# =========================
# Face template
# =========================
def _ellipse(cx, cy, w, h, n):
    angles = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([cx + w * np.cos(angles), cy + h * np.sin(angles)])


def face_template(valence=0.0, arousal=0.0, iva_effect=0.0, ear_effect=0.0):
    """
    Canonical 133-point face in the default layout, centred near the nose.

    valence bends the mouth corners upward (IVA effect), arousal widens the
    eye openings (EAR effect). Both moods are on the [-4, 4] scale.
    """
    sizes = dict(DEFAULT_REGION_SIZES)
    eye_height = 6.0 * (1.0 + 0.25 * ear_effect * arousal / 4.0)
    curve = 6.0 * iva_effect * valence / 4.0

    jaw = _ellipse(0.0, 5.0, 90.0, 115.0, sizes["jawline"])
    t = np.linspace(0.0, 1.0, sizes["left_eyebrow"])
    brow_y = -48.0 - 8.0 * np.sin(np.pi * t)
    left_brow = np.column_stack([-65.0 + 45.0 * t, brow_y])
    right_brow = np.column_stack([20.0 + 45.0 * t, brow_y])
    left_eye = _ellipse(-40.0, -25.0, 15.0, eye_height, sizes["left_eye"])
    right_eye = _ellipse(40.0, -25.0, 15.0, eye_height, sizes["right_eye"])

    outer = _ellipse(0.0, 50.0, 30.0, 12.0, 20)
    inner = _ellipse(0.0, 50.0, 20.0, 4.0, sizes["mouth"] - 20)
    for lips, width in ((outer, 30.0), (inner, 20.0)):
        lips[:, 1] -= curve * (lips[:, 0] / width) ** 2
    mouth = np.vstack([outer, inner])

    nose = np.array([[0.0, -20.0], [0.0, -5.0], [0.0, 8.0], [-8.0, 12.0], [8.0, 12.0]])
    cheeks = np.array([[-60.0, 20.0], [60.0, 20.0]])
    parts = {
        "jawline": jaw, "left_eyebrow": left_brow, "right_eyebrow": right_brow,
        "left_eye": left_eye, "right_eye": right_eye, "mouth": mouth,
        "nose_center": nose, "cheeks": cheeks,
    }
    return np.vstack([parts[region] for region, _ in DEFAULT_REGION_SIZES])


def _similarity(points, scale, angle_deg, offset):
    theta = np.deg2rad(angle_deg)
    rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return scale * points @ rotation.T + offset


# =========================
# Latent mood
# =========================
def _latent_days(rng, n_days):
    """(n_days, GRID_STEPS) latent grid plus the daily baselines for one mood axis"""
    mean = LATENT_CENTER + rng.normal(0.0, PARTICIPANT_SD)
    baselines = np.empty(n_days)
    grid = np.empty((n_days, GRID_STEPS))
    previous = mean
    for d in range(n_days):
        base = mean + DAILY_PERSISTENCE * (previous - mean) + rng.normal(0.0, DAILY_SD)
        base = float(np.clip(base, SCORE_MIN, SCORE_MAX))
        baselines[d] = previous = base
        x = base
        steps = rng.normal(0.0, INTRADAY_SD, GRID_STEPS)
        for s in range(GRID_STEPS):
            grid[d, s] = x
            x = float(np.clip(x + INTRADAY_REVERSION * (base - x) + steps[s], SCORE_MIN, SCORE_MAX))
    return mean, baselines, grid


def _latent_at(grid, day, minute_of_day):
    return float(grid[day, min(int(minute_of_day) // GRID_MINUTES, GRID_STEPS - 1)])


def _score(latent):
    return int(np.rint(np.clip(latent, SCORE_MIN, SCORE_MAX)))


# =========================
# Frame channels
# =========================
def _frame(rng, config, profile, timestamp_ms, valence, arousal, head_pose, geometry):
    v, a = valence / 4.0, arousal / 4.0
    au_effect = config.effect(FeatureGroup.ACTION_UNITS)
    au = {}
    for au_id in config.au_ids:
        shift = 0.0
        if au_id in (6, 12):
            shift = 0.25 * au_effect * v
        elif au_id in (1, 2):
            shift = 0.2 * au_effect * a
        value = profile["au"][au_id] + shift + rng.normal(0.0, 0.05)
        au[au_id] = round(float(np.clip(value, 0.0, 1.0)), 4)

    smile = 0.5 + 0.4 * config.effect(FeatureGroup.SMILING) * v + profile["smile"] + rng.normal(0.0, 0.02)
    eye_base = 0.85 + 0.1 * config.effect(FeatureGroup.EYE_OPEN) * a
    left_open = eye_base + rng.normal(0.0, 0.03)
    right_open = eye_base + rng.normal(0.0, 0.03)
    yaw, pitch, roll = head_pose + rng.normal(0.0, 1.0, 3)

    landmarks = geometry + rng.normal(0.0, 0.4, geometry.shape)
    return FrameDescriptor(
        timestamp_ms=int(timestamp_ms),
        au=au,
        smile_p=round(float(np.clip(smile, 0.0, 1.0)), 4),
        left_eye_open_p=round(float(np.clip(left_open, 0.0, 1.0)), 4),
        right_eye_open_p=round(float(np.clip(right_open, 0.0, 1.0)), 4),
        head=(round(float(yaw), 3), round(float(pitch), 3), round(float(roll), 3)),
        landmarks=np.round(landmarks, 2),
    )


def _session(rng, config, profile, participant_id, session_id, tz_offset, start_ms, valence, arousal):
    v = valence / 4.0
    session_smile = rng.normal(0.0, 0.03)
    head_pose = np.array([
        rng.normal(0.0, 8.0),
        rng.normal(-5.0 + 6.0 * config.effect(FeatureGroup.HEAD_EULER) * v, 5.0),
        rng.normal(0.0, 4.0),
    ])
    face = face_template(valence, arousal, config.effect(FeatureGroup.INTER_VECTOR_ANGLE),
                         config.effect(FeatureGroup.EYE_ASPECT_RATIO))
    geometry = _similarity(face, rng.uniform(1.2, 1.8), head_pose[2],
                           np.array([240.0, 320.0]) + rng.normal(0.0, 10.0, 2))
    session_profile = dict(profile, smile=profile["smile"] + session_smile)

    frames = []
    for i in range(config.frames_per_session):
        timestamp = start_ms + i * FRAME_SPACING_MS + int(rng.integers(0, 200))
        frames.append(_frame(rng, config, session_profile, timestamp, valence, arousal, head_pose, geometry))
    return Session(participant_id=participant_id, session_id=session_id, frames=tuple(frames),
                   tz_offset_minutes=tz_offset)


# =========================
# Participants and cohort
# =========================
def _participant_seed(seed, index):
    return np.random.SeedSequence([int(seed), int(index)])


def generate_participant(config: CohortConfig, index):
    """Sessions, surveys and latent record for participant `index` (own random stream)"""
    rng = np.random.default_rng(_participant_seed(config.seed, index))
    participant_id = f"P{index + 1:02d}"
    tz_offset = int(rng.choice(TZ_OFFSETS))
    profile = {
        "au": {au_id: float(rng.uniform(0.1, 0.3)) for au_id in config.au_ids},
        "smile": float(rng.normal(0.0, 0.02)),
    }
    valence_mean, valence_base, valence_grid = _latent_days(rng, config.n_days)
    arousal_mean, arousal_base, arousal_grid = _latent_days(rng, config.n_days)
    missing = rng.random(config.n_days) < config.missing_day_rate
    first_day = date.fromisoformat(config.start_date)
    epoch = datetime(1970, 1, 1)

    sessions, surveys, days, latent_sessions, latent_surveys = [], [], [], [], []
    for d in range(config.n_days):
        day = first_day + timedelta(days=d)
        local_midnight_ms = int((datetime.combine(day, datetime.min.time()) - epoch).total_seconds() * 1000)
        utc_midnight_ms = local_midnight_ms - tz_offset * MS_PER_MINUTE
        days.append({
            "day": day.isoformat(),
            "missing": bool(missing[d]),
            "valence_baseline": float(valence_base[d]),
            "arousal_baseline": float(arousal_base[d]),
        })
        if missing[d]:
            continue

        for hour in config.survey_hours():
            jitter = rng.uniform(-config.survey_jitter_minutes, config.survey_jitter_minutes)
            answered = rng.random() < config.survey_compliance
            if not answered:
                continue
            minute = hour * 60.0 + jitter
            timestamp = utc_midnight_ms + int(round(minute * MS_PER_MINUTE))
            valence = _latent_at(valence_grid, d, minute)
            arousal = _latent_at(arousal_grid, d, minute)
            surveys.append(SurveyResponse(participant_id, timestamp, _score(valence), _score(arousal), tz_offset))
            latent_surveys.append({"timestamp_ms": timestamp, "valence_latent": valence, "arousal_latent": arousal})

        n_sessions = int(rng.poisson(config.sessions_per_day))
        night = rng.random(n_sessions) < config.night_session_rate
        minutes = np.where(night, rng.uniform(0.0, 7 * 60.0, n_sessions), rng.uniform(7 * 60.0, 23.5 * 60.0, n_sessions))
        for k, minute in enumerate(np.sort(minutes)):
            session_id = f"{participant_id}-d{d + 1:02d}-s{k + 1:03d}"
            start = utc_midnight_ms + int(round(minute * MS_PER_MINUTE))
            valence = _latent_at(valence_grid, d, minute)
            arousal = _latent_at(arousal_grid, d, minute)
            sessions.append(_session(rng, config, profile, participant_id, session_id, tz_offset, start, valence, arousal))
            latent_sessions.append({"session_id": session_id, "valence_latent": valence, "arousal_latent": arousal})

    record = {
        "participant_id": participant_id,
        "tz_offset_minutes": tz_offset,
        "valence_mean": valence_mean,
        "arousal_mean": arousal_mean,
        "days": days,
        "sessions": latent_sessions,
        "surveys": latent_surveys,
    }
    return sessions, surveys, record


def generate_cohort(config: CohortConfig, n_jobs=1) -> Cohort:
    """Whole cohort; participants are independent so the result does not depend on n_jobs"""
    if n_jobs == 1:
        parts = [generate_participant(config, i) for i in range(config.n_participants)]
    else:
        parts = Parallel(n_jobs=n_jobs)(delayed(generate_participant)(config, i) for i in range(config.n_participants))

    sessions = [s for part in parts for s in part[0]]
    surveys = [s for part in parts for s in part[1]]
    manifest = {
        "generator": "synthetic_cohort",
        "config": config.to_dict(),
        "layout": {
            "region_sizes": [[region, size] for region, size in DEFAULT_REGION_SIZES],
            "eye_contour_ear_offsets": list(EYE_CONTOUR_EAR_OFFSETS),
        },
        "n_sessions": len(sessions),
        "n_surveys": len(surveys),
        "participants": [part[2] for part in parts],
    }
    logging.info(f"Generated cohort: {config.n_participants} participants, {len(sessions)} sessions, {len(surveys)} surveys")
    return Cohort(sessions=sessions, surveys=surveys, manifest=manifest)
