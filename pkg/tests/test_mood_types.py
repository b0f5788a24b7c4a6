import unittest

import numpy as np
import pandas as pd
import pytest

from errors import MissingChannel, NonMonotonicTime, OutOfRange, SchemaMismatch
from mood_types import (
    DEFAULT_AU_IDS, GROUP_ORDER, N_LANDMARKS, FeatureGroup, FeatureSchema, FeatureVector,
    Horizon, LandmarkLayout, SampleSet, SurveyResponse, au_name, local_time,
    serialize_session, validate_frame, validate_session, validate_survey,
)
from tests.conftest import make_raw_frame


class TestLandmarkLayout(unittest.TestCase):
    def setUp(self):
        """Set up the default 133-point layout"""
        self.layout = LandmarkLayout.default()

    def test_regions_partition_all_points(self):
        """Test that every landmark index belongs to exactly one region"""
        indices = sorted(i for points in self.layout.region_map.values() for i in points)
        self.assertEqual(indices, list(range(N_LANDMARKS)))
        self.assertEqual(len(self.layout.region_map["mouth"]), 38)
        self.assertEqual(len(self.layout.region_map["cheeks"]), 2)

    def test_default_eye_points(self):
        """Test the EAR points of the default layout"""
        self.assertEqual(self.layout.eye_index_spec["left_eye"], (64, 61, 59, 56, 69, 67))
        self.assertEqual(self.layout.region_of(64), "left_eye")
        for idx in self.layout.eye_index_spec["right_eye"]:
            self.assertEqual(self.layout.region_of(idx), "right_eye")

    def test_overlapping_regions_rejected(self):
        """Test that an index assigned to two regions is rejected"""
        region_map = dict(self.layout.region_map)
        region_map["cheeks"] = (0, 132)
        with self.assertRaises(OutOfRange):
            LandmarkLayout(region_map=region_map, eye_index_spec=self.layout.eye_index_spec)

    def test_from_dict_round_trip(self):
        """Test that from_dict rebuilds the same layout"""
        data = {
            "region_map": {k: list(v) for k, v in self.layout.region_map.items()},
            "eye_index_spec": {k: list(v) for k, v in self.layout.eye_index_spec.items()},
        }
        self.assertEqual(dict(LandmarkLayout.from_dict(data).eye_index_spec), dict(self.layout.eye_index_spec))


class TestFrameValidation(unittest.TestCase):
    def setUp(self):
        """Set up a valid raw frame"""
        self.raw = make_raw_frame(1_000)

    def test_valid_frame(self):
        """Test that a complete frame validates"""
        frame = validate_frame(self.raw)
        self.assertEqual(frame.timestamp_ms, 1_000)
        self.assertEqual(sorted(frame.au), sorted(DEFAULT_AU_IDS))
        self.assertEqual(frame.landmarks.shape, (N_LANDMARKS, 2))
        self.assertEqual(frame.yaw, 1.0)
        self.assertFalse(frame.landmarks.flags.writeable)

    def test_missing_channel(self):
        """Test that a missing channel raises MissingChannel"""
        del self.raw["smile_p"]
        with self.assertRaises(MissingChannel):
            validate_frame(self.raw)

    def test_probability_out_of_range(self):
        """Test that a probability above 1 raises OutOfRange"""
        self.raw["left_eye_open_p"] = 1.2
        with self.assertRaises(OutOfRange):
            validate_frame(self.raw)

    def test_head_angle_out_of_range(self):
        """Test that a head angle beyond 180 degrees raises OutOfRange"""
        self.raw["roll"] = 181.0
        with self.assertRaises(OutOfRange):
            validate_frame(self.raw)

    def test_wrong_landmark_count(self):
        """Test that a landmark array of the wrong shape raises MissingChannel"""
        self.raw["landmarks"] = self.raw["landmarks"][:-1]
        with self.assertRaises(MissingChannel):
            validate_frame(self.raw)

    def test_au_mapping_form(self):
        """Test that AUs keyed by name are accepted"""
        self.raw["au"] = {au_name(a): 0.1 for a in DEFAULT_AU_IDS}
        frame = validate_frame(self.raw)
        self.assertEqual(frame.au[25], 0.1)

    def test_malformed_au(self):
        """Test that a non-numeric AU key or a scalar AU field raises a named error"""
        self.raw["au"] = dict({au_name(a): 0.1 for a in DEFAULT_AU_IDS}, AUxx=0.1)
        with self.assertRaises(OutOfRange):
            validate_frame(self.raw)
        self.raw["au"] = 0.5
        with self.assertRaises(MissingChannel):
            validate_frame(self.raw)


class TestSessionValidation(unittest.TestCase):
    def test_non_monotonic_time(self):
        """Test that decreasing timestamps raise NonMonotonicTime"""
        record = {
            "participant_id": "P01",
            "session_id": "S1",
            "frames": [make_raw_frame(2_000), make_raw_frame(1_000)],
        }
        with self.assertRaises(NonMonotonicTime):
            validate_session(record)

    def test_equal_timestamps_allowed(self):
        """Test that repeated timestamps are accepted"""
        record = {
            "participant_id": "P01",
            "session_id": "S1",
            "frames": [make_raw_frame(1_000), make_raw_frame(1_000)],
        }
        session = validate_session(record)
        self.assertEqual(session.start_ms, session.end_ms)

    def test_serialize_then_validate(self):
        """Test that a serialized session validates back to an equal session"""
        record = {
            "participant_id": "P01",
            "session_id": "S1",
            "tz_offset_minutes": -300,
            "frames": [make_raw_frame(1_000, tz_offset_minutes=-300), make_raw_frame(1_500, tz_offset_minutes=-300)],
        }
        session = validate_session(record)
        again = validate_session(serialize_session(session))
        self.assertEqual(again, session)
        self.assertEqual(again.tz_offset_minutes, -300)


class TestSurveys(unittest.TestCase):
    def test_score_range(self):
        """Test that scores outside [-4, 4] are rejected"""
        with self.assertRaises(OutOfRange):
            SurveyResponse("P01", 0, 5, 0)
        with self.assertRaises(OutOfRange):
            validate_survey({"participant_id": "P01", "timestamp_ms": "0", "tz_offset_minutes": "0",
                             "valence": "1.5", "arousal": "0"})

    def test_string_fields_parsed(self):
        """Test that CSV string fields become integers"""
        survey = validate_survey({"participant_id": "P02", "timestamp_ms": "86400000", "tz_offset_minutes": "60",
                                  "valence": "-4", "arousal": "3"})
        self.assertEqual(survey.valence, -4)
        self.assertEqual(survey.tz_offset_minutes, 60)

    def test_local_time(self):
        """Test that the UTC offset shifts wall-clock time"""
        self.assertEqual(local_time(0, 90).hour, 1)
        self.assertEqual(local_time(0, 90).minute, 30)


class TestFeatureSchema(unittest.TestCase):
    def setUp(self):
        """Set up a schema covering three groups"""
        self.schema = FeatureSchema((
            ("smile_p", FeatureGroup.SMILING),
            ("yaw", FeatureGroup.HEAD_EULER),
            ("pitch", FeatureGroup.HEAD_EULER),
            ("AU01", FeatureGroup.ACTION_UNITS),
        ))

    def test_group_sizes(self):
        """Test per-group column counts"""
        sizes = self.schema.group_sizes()
        self.assertEqual(list(sizes), list(GROUP_ORDER))
        self.assertEqual(sizes[FeatureGroup.HEAD_EULER], 2)
        self.assertEqual(sizes[FeatureGroup.EYE_OPEN], 0)

    def test_indices_partition(self):
        """Test that indices_of and indices_without split the columns"""
        kept = self.schema.indices_of("head_euler")
        rest = self.schema.indices_without("head_euler")
        self.assertEqual(kept.tolist(), [1, 2])
        self.assertEqual(sorted(kept.tolist() + rest.tolist()), [0, 1, 2, 3])

    def test_duplicate_names(self):
        """Test that duplicate feature names raise SchemaMismatch"""
        with self.assertRaises(SchemaMismatch):
            FeatureSchema((("a", FeatureGroup.SMILING), ("a", FeatureGroup.EYE_OPEN)))

    def test_digest_depends_on_order(self):
        """Test that the schema digest changes when columns are reordered"""
        reordered = self.schema.subset([1, 0, 2, 3])
        self.assertNotEqual(reordered.digest(), self.schema.digest())
        self.assertEqual(self.schema.subset([0, 1, 2, 3]).digest(), self.schema.digest())

    def test_vector_length_checked(self):
        """Test that a vector must match its schema"""
        with self.assertRaises(SchemaMismatch):
            FeatureVector(np.zeros(3), self.schema)
        vector = FeatureVector(np.arange(4.0), self.schema)
        self.assertEqual(vector.as_dict()["AU01"], 3.0)


def _meta(n):
    return pd.DataFrame({
        "row_id": [f"r{i}" for i in range(n)],
        "participant_id": ["P01"] * n,
        "reference_time": list(range(n)),
        "valence_label": [i % 2 for i in range(n)],
        "arousal_label": [1] * n,
    })


SCHEMA = FeatureSchema((("a", FeatureGroup.SMILING), ("b", FeatureGroup.EYE_OPEN)))


@pytest.mark.parametrize("horizon,lag,valid", [
    (Horizon.AT_MOMENT, 0, True),
    (Horizon.DAILY, 0, True),
    (Horizon.DAILY, 1, False),
    (Horizon.NEXT_DAY, 1, True),
    (Horizon.NEXT_DAY, 8, True),
    (Horizon.NEXT_DAY, 3, False),
    (Horizon.NEXT_DAY, 0, False),
])
def test_sample_set_lag_rules(horizon, lag, valid):
    """Test that lag_days is tied to the horizon"""
    def build():
        return SampleSet(horizon, SCHEMA, np.zeros((4, 2)), _meta(4), lag_days=lag)

    if valid:
        assert build().lag_days == lag
    else:
        with pytest.raises(OutOfRange):
            build()


def test_sample_set_accessors():
    """Test names, labels, masks and column selection"""
    features = np.array([[1.0, np.nan], [2.0, 3.0], [4.0, 5.0]])
    samples = SampleSet(Horizon.NEXT_DAY, SCHEMA, features, _meta(3), lag_days=2)
    assert samples.name == "next_day_lag2"
    assert samples.labels("valence").tolist() == [0, 1, 0]
    assert samples.mask().sum() == 1
    narrowed = samples.select_columns([1])
    assert narrowed.schema.names == ["b"]
    assert narrowed.features.shape == (3, 1)
    flipped = samples.with_labels("valence", [1, 1, 1])
    assert flipped.labels("valence").tolist() == [1, 1, 1]
    assert samples.labels("valence").tolist() == [0, 1, 0]
    assert list(samples.to_frame().columns[-2:]) == ["a", "b"]
    assert [row.valence_label for row in samples.rows()] == [0, 1, 0]


def test_sample_set_non_binary_labels():
    """Test that labels outside {0, 1} raise OutOfRange"""
    meta = _meta(2)
    meta["arousal_label"] = [2, 0]
    with pytest.raises(OutOfRange):
        SampleSet(Horizon.AT_MOMENT, SCHEMA, np.zeros((2, 2)), meta)
