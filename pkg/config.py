# Config file
"""
MoodCam Configuration
=====================

config.json holds one object per section (data, features, windows, model,
ablation, synth, logging). load_config() deep-merges the file over the
defaults below and validates every value; relative paths in the data section
resolve against the config file's directory.

Every field documents itself through its `help` metadata, which
render_reference() turns into Documentation/CONFIG_REFERENCE.md.
"""

import copy
import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from errors import ConfigError, InvalidConfig
from mood_learning import Hyperparams
from mood_types import DEFAULT_AU_IDS, GROUP_ORDER, VALID_LAGS, FeatureGroup
from synthetic_cohort import CohortConfig

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
PCA_SCOPES = ("global", "per_fold")


def _help(text, default=None, default_factory=None):
    if default_factory is not None:
        return field(default_factory=default_factory, metadata={"help": text})
    return field(default=default, metadata={"help": text})


# =========================
# Sections
# =========================
@dataclass(frozen=True)
class DataConfig:
    sessions_path: str = _help("JSON Lines frame file", "data/sessions.jsonl")
    surveys_path: str = _help("Survey CSV file", "data/surveys.csv")
    out_dir: str = _help("Directory for reports, manifests and intermediate tables", "out")
    min_eye_open_p: float = _help(
        "Frames whose mean eye-open probability is below this are dropped before featurization (0 disables)", 0.0)

    def __post_init__(self):
        if not 0.0 <= self.min_eye_open_p <= 1.0:
            raise ConfigError("data.min_eye_open_p must lie in [0, 1]")


@dataclass(frozen=True)
class FeaturesConfig:
    au_ids: List[int] = _help("Action-unit ids, in channel order", default_factory=lambda: list(DEFAULT_AU_IDS))
    centroid_index: Optional[int] = _help(
        "Landmark used as the IVA centroid; null uses the mean of the nose landmarks", None)
    triangle_pairs: Optional[List[List[int]]] = _help(
        "Explicit IVA landmark pairs; null uses every within-region pair", None)
    n_components: int = _help("IVA principal components kept", 10)
    pca_scope: str = _help("'global' fits IVA PCA on the whole cohort, 'per_fold' refits it inside every LOPO fold",
                           "global")
    include_acceleration: bool = _help("Append mean IVA angular accelerations (debug features)", False)
    ear_epsilon: float = _help("Eye-corner distance below which a frame's eye counts as degenerate", 1e-9)

    def __post_init__(self):
        if len(self.au_ids) != 12 or len(set(self.au_ids)) != 12:
            raise ConfigError("features.au_ids must list 12 distinct ids")
        if self.n_components < 1:
            raise ConfigError("features.n_components must be >= 1")
        if self.pca_scope not in PCA_SCOPES:
            raise ConfigError(f"features.pca_scope must be one of {PCA_SCOPES}")
        if not self.ear_epsilon > 0:
            raise ConfigError("features.ear_epsilon must be > 0")


@dataclass(frozen=True)
class WindowsConfig:
    window_minutes: int = _help("At-moment window: sessions ending this many minutes before a survey", 30)
    lags: List[int] = _help("Next-day lags to build and evaluate", default_factory=lambda: [1, 2])
    extended_lags: bool = _help("Also evaluate lags 4 and 8", False)

    def __post_init__(self):
        if self.window_minutes <= 0:
            raise ConfigError("windows.window_minutes must be > 0")
        if not self.lags or any(lag not in VALID_LAGS for lag in self.lags):
            raise ConfigError(f"windows.lags must be a non-empty subset of {VALID_LAGS}")

    def resolved_lags(self):
        lags = set(self.lags)
        if self.extended_lags:
            lags |= {4, 8}
        return sorted(lags)


def _default_grid():
    return {"max_depth": [3, 5, 8, None], "min_samples_leaf": [1, 5, 10], "min_impurity_decrease": [0.0]}


@dataclass(frozen=True)
class ModelConfig:
    grid: dict = _help("Decision-tree grid: lists for max_depth (null = unlimited), min_samples_leaf, "
                       "min_impurity_decrease", default_factory=_default_grid)
    n_trees: int = _help("Random-forest size used for feature selection", 100)
    max_features: Optional[int] = _help("Features sampled per forest node; null uses ceil(sqrt(d))", None)
    smote_k: int = _help("SMOTE nearest-neighbour count", 5)
    inner_folds: int = _help("Grouped inner-CV folds for tuning", 3)
    threshold: float = _help("Probability threshold for F1 predictions", 0.5)
    seed: int = _help("Run seed; every random stream derives from it", 42)
    threads: int = _help("Parallel workers for folds and ablation cells (-1 = all cores)", 1)

    def __post_init__(self):
        unknown = set(self.grid) - {"max_depth", "min_samples_leaf", "min_impurity_decrease"}
        if unknown:
            raise ConfigError(f"model.grid has unknown keys {sorted(unknown)}")
        try:
            self.hyperparams_grid()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"model.grid is invalid: {e}")
        if self.n_trees < 1 or self.smote_k < 1 or self.inner_folds < 2:
            raise ConfigError("model.n_trees and model.smote_k must be >= 1, model.inner_folds >= 2")
        if self.max_features is not None and self.max_features < 1:
            raise ConfigError("model.max_features must be >= 1 or null")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("model.threshold must lie in (0, 1)")
        if self.threads == 0:
            raise ConfigError("model.threads must be non-zero")

    def hyperparams_grid(self):
        grid = self.grid
        points = [
            Hyperparams(max_depth=depth, min_samples_leaf=int(leaf), min_impurity_decrease=float(decrease))
            for depth in grid.get("max_depth", [None])
            for leaf in grid.get("min_samples_leaf", [1])
            for decrease in grid.get("min_impurity_decrease", [0.0])
        ]
        if not points:
            raise ValueError("grid is empty")
        return tuple(points)


@dataclass(frozen=True)
class AblationConfig:
    modes: List[str] = _help("Ablation modes to run", default_factory=lambda: ["remove_group", "only_group"])
    groups: List[str] = _help("Feature groups, in table row order", default_factory=lambda: [g.value for g in GROUP_ORDER])

    def __post_init__(self):
        if not self.modes or any(mode not in ("remove_group", "only_group") for mode in self.modes):
            raise ConfigError("ablation.modes must be a non-empty subset of [remove_group, only_group]")
        try:
            [FeatureGroup(g) for g in self.groups]
        except ValueError as e:
            raise ConfigError(f"ablation.groups: {e}")


@dataclass(frozen=True)
class LoggingConfig:
    level: str = _help("Log level; the MOODCAM_LOG environment variable overrides it", "INFO")
    log_dir: str = _help("Directory for timestamped log files", "logs")

    def __post_init__(self):
        if self.level.upper() not in LOG_LEVELS:
            raise ConfigError(f"logging.level must be one of {LOG_LEVELS}")


SECTIONS = {
    "data": DataConfig,
    "features": FeaturesConfig,
    "windows": WindowsConfig,
    "model": ModelConfig,
    "ablation": AblationConfig,
    "logging": LoggingConfig,
}


@dataclass(frozen=True)
class MoodCamConfig:
    data: DataConfig = field(default_factory=DataConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    windows: WindowsConfig = field(default_factory=WindowsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    synth: CohortConfig = field(default_factory=CohortConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def to_dict(self):
        out = {name: _section_dict(getattr(self, name)) for name in SECTIONS}
        out["synth"] = self.synth.to_dict()
        return out


def _section_dict(section):
    return {f.name: copy.deepcopy(getattr(section, f.name)) for f in fields(section)}


# =========================
# Loading
# =========================
def default_dict():
    return MoodCamConfig().to_dict()


def deep_merge(base, override, where="config"):
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if key not in merged:
            raise ConfigError(f"Unknown key '{where}.{key}'")
        if isinstance(merged[key], dict) and isinstance(value, dict) and key != "grid" and key != "signal_spec":
            merged[key] = deep_merge(merged[key], value, f"{where}.{key}")
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _check_types(name, cls, values):
    for f in fields(cls):
        value = values[f.name]
        default = getattr(cls(), f.name)
        if value is None or default is None:
            continue
        if isinstance(default, bool) != isinstance(value, bool):
            raise ConfigError(f"{name}.{f.name} must be a boolean")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
                raise ConfigError(f"{name}.{f.name} must be a number")
            if isinstance(default, int) and not isinstance(default, float) and int(value) != value:
                raise ConfigError(f"{name}.{f.name} must be an integer")
        if isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{name}.{f.name} must be a string")
        if isinstance(default, (list, dict)) and not isinstance(value, type(default)):
            raise ConfigError(f"{name}.{f.name} must be a {type(default).__name__}")


def config_from_dict(data, base_dir=None):
    merged = deep_merge(default_dict(), data or {})
    sections = {}
    for name, cls in SECTIONS.items():
        values = merged[name]
        _check_types(name, cls, values)
        sections[name] = cls(**values)
    if base_dir is not None:
        data_section = sections["data"]

        def resolve(p):
            return str(Path(p) if os.path.isabs(p) else Path(base_dir) / p)

        sections["data"] = DataConfig(
            sessions_path=resolve(data_section.sessions_path),
            surveys_path=resolve(data_section.surveys_path),
            out_dir=resolve(data_section.out_dir),
            min_eye_open_p=data_section.min_eye_open_p,
        )
    try:
        synth = CohortConfig.from_dict(merged["synth"])
    except (InvalidConfig, TypeError) as e:
        raise ConfigError(f"synth: {e}")
    return MoodCamConfig(synth=synth, **sections)


def load_config(path=None):
    """Defaults, overlaid with the JSON file at `path` (if given) and MOODCAM_LOG from the environment/.env"""
    load_dotenv()
    data, base_dir = {}, None
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                data = json.load(handle)
        except OSError as e:
            raise ConfigError(f"Cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}: invalid JSON ({e.msg})")
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        base_dir = os.path.dirname(os.path.abspath(path))
    env_level = os.getenv("MOODCAM_LOG")
    if env_level:
        data = copy.deepcopy(data)
        data.setdefault("logging", {})["level"] = env_level.strip().upper()
    return config_from_dict(data, base_dir)


# =========================
# Reference page
# =========================
def render_reference():
    """Markdown reference of every config key, its default and meaning"""
    defaults = default_dict()
    lines = [
        "# MoodCam Configuration Reference",
        "",
        "Generated by `python moodcam.py reference`. Every key is optional; missing keys take the default shown.",
        "",
    ]
    for name, cls in SECTIONS.items():
        lines += [f"## `{name}`", "", "| Key | Default | Description |", "|---|---|---|"]
        for f in fields(cls):
            default = json.dumps(defaults[name][f.name])
            lines.append(f"| `{name}.{f.name}` | `{default}` | {f.metadata.get('help', '')} |")
        lines.append("")
    lines += [
        "## `synth`",
        "",
        "Synthetic cohort settings (`moodcam.py synth`).",
        "",
        "| Key | Default |",
        "|---|---|",
    ]
    for key, value in defaults["synth"].items():
        lines.append(f"| `synth.{key}` | `{json.dumps(value)}` |")
    lines += ["", "Environment: `MOODCAM_LOG` (DEBUG, INFO, WARNING, ERROR) overrides `logging.level`.", ""]
    return "\n".join(lines)
