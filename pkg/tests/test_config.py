import json
import os
import unittest
from pathlib import Path

import pytest

from config import MoodCamConfig, config_from_dict, deep_merge, load_config, render_reference
from errors import ConfigError

REPO_CONFIG = Path(__file__).resolve().parent.parent / "config.json"


class TestDefaults(unittest.TestCase):
    def setUp(self):
        """Set up the built-in defaults"""
        self.config = config_from_dict({})

    def test_model_defaults(self):
        """Test the default model section"""
        self.assertEqual(self.config.model.seed, 42)
        self.assertEqual(self.config.model.n_trees, 100)
        self.assertEqual(len(self.config.model.hyperparams_grid()), 12)

    def test_windows_defaults(self):
        """Test the default windows and lags"""
        self.assertEqual(self.config.windows.window_minutes, 30)
        self.assertEqual(self.config.windows.resolved_lags(), [1, 2])

    def test_repo_config_matches_defaults(self):
        """Test that the shipped config.json only restates the defaults"""
        shipped = load_config(REPO_CONFIG)
        self.assertEqual(shipped.model, self.config.model)
        self.assertEqual(shipped.features, self.config.features)
        self.assertEqual(shipped.synth, self.config.synth)
        self.assertEqual(Path(shipped.data.out_dir), REPO_CONFIG.parent / "out")

    def test_to_dict_sections(self):
        """Test that to_dict lists every section"""
        self.assertEqual(sorted(MoodCamConfig().to_dict()),
                         ["ablation", "data", "features", "logging", "model", "synth", "windows"])


class TestValidation(unittest.TestCase):
    def test_unknown_key(self):
        """Test that a misspelled key is rejected with its path"""
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({"model": {"n_tree": 10}})
        self.assertIn("model.n_tree", str(ctx.exception))

    def test_wrong_type(self):
        """Test that a string where a number belongs is rejected"""
        with self.assertRaises(ConfigError):
            config_from_dict({"model": {"n_trees": "100"}})
        with self.assertRaises(ConfigError):
            config_from_dict({"features": {"include_acceleration": 1}})

    def test_invalid_values(self):
        """Test range checks in several sections"""
        for data in (
            {"windows": {"lags": [3]}},
            {"features": {"pca_scope": "per_session"}},
            {"model": {"threshold": 1.0}},
            {"model": {"grid": {"max_depth": [-1]}}},
            {"ablation": {"groups": ["frowning"]}},
            {"logging": {"level": "LOUD"}},
            {"synth": {"n_days": 0}},
        ):
            with self.assertRaises(ConfigError):
                config_from_dict(data)

    def test_grid_replaced(self):
        """Test that a grid override replaces the default grid"""
        config = config_from_dict({"model": {"grid": {"max_depth": [2]}}})
        grid = config.model.hyperparams_grid()
        self.assertEqual(len(grid), 1)
        self.assertEqual(grid[0].max_depth, 2)

    def test_extended_lags(self):
        """Test that extended lags add 4 and 8"""
        config = config_from_dict({"windows": {"extended_lags": True}})
        self.assertEqual(config.windows.resolved_lags(), [1, 2, 4, 8])

    def test_deep_merge_keeps_siblings(self):
        """Test that merging one key keeps the others"""
        merged = deep_merge({"a": {"x": 1, "y": 2}}, {"a": {"y": 3}})
        self.assertEqual(merged, {"a": {"x": 1, "y": 3}})


def test_relative_paths_resolve_against_config(tmp_path):
    """Test that data paths are relative to the config file"""
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"data": {"sessions_path": "in/s.jsonl", "out_dir": "/abs/out"}}), encoding="utf-8")
    config = load_config(path)
    assert config.data.sessions_path == str(tmp_path / "in" / "s.jsonl")
    assert config.data.out_dir == os.path.normpath("/abs/out")


def test_env_overrides_level(tmp_path, monkeypatch):
    """Test that MOODCAM_LOG overrides logging.level"""
    monkeypatch.setenv("MOODCAM_LOG", "debug")
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"logging": {"level": "WARNING"}}), encoding="utf-8")
    assert load_config(path).logging.level == "DEBUG"
    monkeypatch.delenv("MOODCAM_LOG")
    assert load_config(path).logging.level == "WARNING"


def test_invalid_json(tmp_path):
    """Test that a malformed config file is a ConfigError"""
    path = tmp_path / "run.json"
    path.write_text("{\n  \"model\": \n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")


def test_reference_lists_every_key():
    """Test that the reference page documents every section key"""
    text = render_reference()
    for section, values in MoodCamConfig().to_dict().items():
        for key in values:
            assert f"`{section}.{key}`" in text
