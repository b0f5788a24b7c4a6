import unittest
from datetime import date

import numpy as np
import pandas as pd
import pytest

from errors import DataError, EmptyDay, OutOfRange
from facial_features import FeaturizedSession, session_schema
from mood_dataset import (
    EPOCHS, STATISTICS, LabelPolicy, at_moment_samples, binarize,
    build_day_features, daily_epoch_features, daily_labels, daily_samples,
    daily_schema, epoch_of, imputation_mask, local_day, median_imputer, next_day_samples,
)
from mood_types import FeatureGroup, FeatureSchema, FeatureVector, Horizon, SurveyResponse

SCHEMA = FeatureSchema((("smile_p", FeatureGroup.SMILING), ("yaw", FeatureGroup.HEAD_EULER)))
DAY0 = int(pd.Timestamp("2023-03-06").value // 1_000_000)
HOUR = 3_600_000
MINUTE = 60_000


def featurized(pid, sid, start_ms, values, end_ms=None, tz=0):
    return FeaturizedSession(
        participant_id=pid,
        session_id=sid,
        start_ms=start_ms,
        end_ms=end_ms if end_ms is not None else start_ms + 6000,
        tz_offset_minutes=tz,
        features=FeatureVector(np.asarray(values, dtype=float), SCHEMA),
    )


class TestLabels(unittest.TestCase):
    def test_binarize(self):
        """Test that negative scores are low and zero or above is high"""
        self.assertEqual([binarize(s) for s in (-4, -1, -0.5, 0, 0.3, 4)], [0, 0, 0, 1, 1, 1])

    def test_custom_threshold(self):
        """Test a policy with a different threshold"""
        self.assertEqual(LabelPolicy(threshold=1.0).apply(0.5), 0)

    def test_out_of_range(self):
        """Test that scores outside [-4, 4] are rejected"""
        with self.assertRaises(OutOfRange):
            binarize(4.5)

    def test_daily_labels_mean(self):
        """Test the daily mean mood over local days"""
        surveys = [
            SurveyResponse("P01", DAY0 + 10 * HOUR, -2, 1),
            SurveyResponse("P01", DAY0 + 15 * HOUR, 1, 1),
            SurveyResponse("P01", DAY0 + 26 * HOUR, 3, -3),
        ]
        labels = daily_labels(surveys)
        first = labels[("P01", date(2023, 3, 6))]
        self.assertEqual(first.valence_mean, -0.5)
        self.assertEqual(first.n_surveys, 2)
        self.assertEqual(labels[("P01", date(2023, 3, 7))].arousal_mean, -3.0)


class TestAtMoment(unittest.TestCase):
    def setUp(self):
        """Set up two surveys 20 minutes apart and sessions around them"""
        self.t1 = DAY0 + 12 * HOUR
        self.t2 = self.t1 + 20 * MINUTE
        self.surveys = [SurveyResponse("P01", self.t1, -1, 2), SurveyResponse("P01", self.t2, 3, -2)]

    def _session(self, sid, end_ms, pid="P01"):
        return featurized(pid, sid, end_ms - 6000, [0.5, 1.0], end_ms=end_ms)

    def test_window_matching(self):
        """Test which sessions fall inside a 30-minute window"""
        sessions = [
            self._session("inside", self.t1 - 10 * MINUTE),
            self._session("edge", self.t1 - 30 * MINUTE),
            self._session("outside", self.t1 - 31 * MINUTE),
            self._session("between", self.t1 + 5 * MINUTE),
            self._session("after", self.t2 + 1 * MINUTE),
            self._session("stranger", self.t1 - 5 * MINUTE, pid="P02"),
        ]
        samples = at_moment_samples(sessions, self.surveys)
        matched = dict(zip(samples.meta["session_id"], samples.meta["survey_timestamp_ms"]))
        self.assertEqual(matched, {"edge": self.t1, "inside": self.t1, "between": self.t2})
        self.assertEqual(samples.dropped["unmatched_sessions"], 3)
        self.assertEqual(samples.horizon, Horizon.AT_MOMENT)

    def test_labels_follow_survey(self):
        """Test that each row takes the labels of its matched survey"""
        samples = at_moment_samples([self._session("a", self.t1 - MINUTE), self._session("b", self.t2)], self.surveys)
        self.assertEqual(samples.labels("valence").tolist(), [0, 1])
        self.assertEqual(samples.labels("arousal").tolist(), [1, 0])

    def test_window_size(self):
        """Test that a narrower window drops more sessions"""
        sessions = [self._session("a", self.t1 - 10 * MINUTE), self._session("b", self.t1 - 2 * MINUTE)]
        samples = at_moment_samples(sessions, self.surveys, window_minutes=5)
        self.assertEqual(samples.meta["session_id"].tolist(), ["b"])


class TestEpochStatistics(unittest.TestCase):
    def setUp(self):
        """Set up four morning sessions with smile 1..4"""
        self.sessions = [
            featurized("P01", f"s{i}", DAY0 + 8 * HOUR + i * HOUR, [float(i + 1), 10.0])
            for i in range(4)
        ]

    def test_epoch_of(self):
        """Test the 6-hour epoch boundaries"""
        hours = [0, 5, 6, 11, 12, 17, 18, 23]
        self.assertEqual([epoch_of(pd.Timestamp(DAY0 + h * HOUR, unit="ms")) for h in hours], [0, 0, 1, 1, 2, 2, 3, 3])

    def test_statistics(self):
        """Test the eight statistics on [1, 2, 3, 4]"""
        values, mask = daily_epoch_features(self.sessions)
        cube = values.reshape(2, len(EPOCHS), len(STATISTICS))
        morning = dict(zip(STATISTICS, cube[0, 1]))
        self.assertEqual(morning["min"], 1.0)
        self.assertEqual(morning["max"], 4.0)
        self.assertEqual(morning["mean"], 2.5)
        self.assertEqual(morning["median"], 2.5)
        self.assertEqual(morning["sum"], 10.0)
        self.assertAlmostEqual(morning["std"], 1.2909944, places=6)
        self.assertAlmostEqual(morning["q1"], 1.75)
        self.assertAlmostEqual(morning["q3"], 3.25)
        self.assertTrue(np.all(cube[1, 1] == [10.0, 10.0, 10.0, 10.0, 40.0, 0.0, 10.0, 10.0]))

    def test_empty_epochs_masked(self):
        """Test that epochs without sessions are NaN and flagged"""
        values, mask = daily_epoch_features(self.sessions)
        cube_mask = mask.reshape(2, len(EPOCHS), len(STATISTICS))
        self.assertTrue(cube_mask[:, [0, 2, 3]].all())
        self.assertFalse(cube_mask[:, 1].any())
        self.assertTrue(np.array_equal(np.isnan(values), mask))

    def test_single_session_std(self):
        """Test that one session gives a std of 0"""
        values, _ = daily_epoch_features(self.sessions[:1])
        cube = values.reshape(2, len(EPOCHS), len(STATISTICS))
        self.assertEqual(cube[0, 1, STATISTICS.index("std")], 0.0)

    def test_errors(self):
        """Test the empty-day and multi-day errors"""
        with self.assertRaises(EmptyDay):
            daily_epoch_features([])
        late = featurized("P01", "late", DAY0 + 30 * HOUR, [1.0, 1.0])
        with self.assertRaises(DataError):
            daily_epoch_features(self.sessions + [late])

    def test_local_day_uses_offset(self):
        """Test that the UTC offset moves a session to the next local day"""
        self.assertEqual(local_day(DAY0 + 22 * HOUR, 0), date(2023, 3, 6))
        self.assertEqual(local_day(DAY0 + 22 * HOUR, 180), date(2023, 3, 7))


def test_daily_dimensions():
    """Test that 40 session features give 1280 daily columns"""
    schema = daily_schema(session_schema())
    assert len(schema) == 1280
    assert schema.names[0] == "AU01@midnight:min"
    assert schema.group_sizes()[FeatureGroup.SMILING] == 32


def _days_with_sessions(day_indices, pid="P01"):
    sessions = [
        featurized(pid, f"d{d}-s{k}", DAY0 + d * 24 * HOUR + (9 + 4 * k) * HOUR, [0.1 * d, float(k)])
        for d in day_indices for k in range(2)
    ]
    return build_day_features(sessions)


def test_daily_samples_counters():
    """Test daily rows and the drop counters"""
    days = _days_with_sessions([0, 1, 2])
    surveys = [
        SurveyResponse("P01", DAY0 + 12 * HOUR, 2, -1),
        SurveyResponse("P01", DAY0 + 36 * HOUR, -3, 0),
        SurveyResponse("P01", DAY0 + 5 * 24 * HOUR, 1, 1),
    ]
    samples = daily_samples(days, surveys, SCHEMA)
    assert samples.meta["day"].tolist() == ["2023-03-06", "2023-03-07"]
    assert samples.labels("valence").tolist() == [1, 0]
    assert samples.labels("arousal").tolist() == [0, 1]
    assert samples.features.shape == (2, 2 * 4 * 8)
    assert samples.dropped == {"label_less_days": 1, "survey_days_without_sessions": 1}
    assert samples.meta["reference_time"].tolist() == [DAY0, DAY0 + 24 * HOUR]


@pytest.mark.parametrize("lag", [1, 2, 4])
def test_next_day_history(lag):
    """Test lag windows, feature width and gap handling"""
    days = _days_with_sessions([0, 1, 2, 3, 5, 6, 7, 8])
    surveys = [SurveyResponse("P01", DAY0 + d * 24 * HOUR + 12 * HOUR, 1, -1) for d in range(10)]
    labels = daily_labels(surveys)
    samples = next_day_samples(days, labels, lag, SCHEMA)
    have = {0, 1, 2, 3, 5, 6, 7, 8}
    expected = [t for t in range(10) if all(t - k in have for k in range(1, lag + 1))]
    assert samples.meta["day"].tolist() == [date(2023, 3, 6 + t).isoformat() for t in expected]
    assert samples.features.shape == (len(expected), lag * 2 * 4 * 8)
    assert samples.dropped["incomplete_lag_rows"] == 10 - len(expected)
    assert samples.name == f"next_day_lag{lag}"
    assert samples.schema.names[0].startswith(f"lag{lag}|")


def test_next_day_oldest_first():
    """Test that the history is laid out oldest day first"""
    days = _days_with_sessions([0, 1])
    labels = daily_labels([SurveyResponse("P01", DAY0 + 2 * 24 * HOUR + 12 * HOUR, 0, 0)])
    samples = next_day_samples(days, labels, 2, SCHEMA)
    width = 2 * 4 * 8
    np.testing.assert_array_equal(samples.features[0, :width], days[0].values)
    np.testing.assert_array_equal(samples.features[0, width:], days[1].values)


def test_next_day_invalid_lag():
    """Test that unsupported lags are rejected"""
    with pytest.raises(OutOfRange):
        next_day_samples([], {}, 3, SCHEMA)


def test_dataset_dimensions_on_cohort(small_cohort):
    """Test daily and next-day widths on a featurized synthetic cohort"""
    from facial_features import SessionFeaturizer, default_triangle_spec, fit_session_pca
    from mood_types import LandmarkLayout

    layout = LandmarkLayout.default()
    spec = default_triangle_spec(layout)
    sessions = small_cohort.sessions[:200]
    featurizer = SessionFeaturizer(spec, fit_session_pca(sessions, spec, layout))
    rows = featurizer.featurize(sessions)
    days = build_day_features(rows)
    daily = daily_samples(days, small_cohort.surveys, featurizer.schema)
    assert daily.features.shape[1] == 1280
    next_day = next_day_samples(days, daily_labels(small_cohort.surveys), 2, featurizer.schema)
    assert next_day.features.shape[1] == 2 * 1280


def test_median_imputer():
    """Test per-column median fill, with 0 for all-missing columns"""
    train = np.array([[1.0, np.nan, np.nan], [3.0, 4.0, np.nan], [5.0, 8.0, np.nan]])
    imputer = median_imputer().fit(train)
    assert imputer.statistics_.tolist() == [3.0, 6.0, 0.0]
    filled = imputer.transform(np.array([[np.nan, 1.0, np.nan]]))
    assert filled.tolist() == [[3.0, 1.0, 0.0]]
    assert np.isnan(train).sum() == 4


def test_imputation_mask():
    """Test that empty epochs are listed per participant-day"""
    days = _days_with_sessions([0, 1])
    mask = imputation_mask(days)
    assert mask == [
        {"participant_id": "P01", "day": "2023-03-06", "empty_epochs": ["midnight", "evening"]},
        {"participant_id": "P01", "day": "2023-03-07", "empty_epochs": ["midnight", "evening"]},
    ]
    full = [featurized("P01", f"s{h}", DAY0 + h * HOUR, [1.0, 2.0]) for h in (1, 7, 13, 19)]
    assert imputation_mask(build_day_features(full)) == []
