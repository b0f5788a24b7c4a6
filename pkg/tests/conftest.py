import json

import numpy as np
import pytest

from cohort_io import write_cohort
from mood_types import DEFAULT_AU_IDS
from synthetic_cohort import CohortConfig, face_template, generate_cohort


def make_raw_frame(timestamp_ms, participant_id="P01", session_id="S1", tz_offset_minutes=0, **overrides):
    """A valid JSON Lines frame record built on the synthetic face template"""
    frame = {
        "participant_id": participant_id,
        "session_id": session_id,
        "timestamp_ms": timestamp_ms,
        "tz_offset_minutes": tz_offset_minutes,
        "au": [0.2] * len(DEFAULT_AU_IDS),
        "smile_p": 0.5,
        "left_eye_open_p": 0.9,
        "right_eye_open_p": 0.9,
        "yaw": 1.0,
        "pitch": -2.0,
        "roll": 0.5,
        "landmarks": (face_template() * 1.5 + 200.0).tolist(),
    }
    frame.update(overrides)
    return frame


SMALL_COHORT = dict(n_participants=5, n_days=8, sessions_per_day=40.0, missing_day_rate=0.0, seed=11)


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(CohortConfig(**SMALL_COHORT))


def write_run_config(path, cohort_dir, out_dir, log_dir, **sections):
    """Config file pointing at a cohort directory, with a fast model section"""
    config = {
        "data": {
            "sessions_path": str(cohort_dir / "sessions.jsonl"),
            "surveys_path": str(cohort_dir / "surveys.csv"),
            "out_dir": str(out_dir),
        },
        "model": {
            "n_trees": 10,
            "grid": {"max_depth": [3, None], "min_samples_leaf": [1, 5]},
            "seed": 5,
        },
        "logging": {"log_dir": str(log_dir)},
    }
    for section, values in sections.items():
        config.setdefault(section, {}).update(values)
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def small_cohort_dir(tmp_path_factory, small_cohort):
    directory = tmp_path_factory.mktemp("cohort")
    write_cohort(small_cohort, directory)
    return directory


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
