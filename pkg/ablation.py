#!/usr/bin/env python3
"""
MoodCam Ablation
================

Feature-group ablation over every (group x horizon x target) cell. Two modes:
remove_group drops one group's columns from the full schema, only_group keeps
nothing but that group's columns.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Sequence, Tuple

from joblib import Parallel, delayed

from errors import EmptySchema, MoodCamError, SchemaMismatch
from mood_learning import DEFAULT_GRID, LopoSettings, lopo_evaluate
from mood_types import GROUP_ORDER, TARGETS, FeatureGroup, SampleSet

MODES = ("remove_group", "only_group")
ABLATION_HORIZONS = ("at_moment", "daily", "next_day_lag1", "next_day_lag2")


@dataclass(frozen=True)
class AblationCell:
    group: FeatureGroup
    horizon: str
    target: str
    n_columns: int
    f1: Optional[float] = None
    auc: Optional[float] = None
    error: Optional[str] = None

    def to_dict(self):
        return {
            "group": self.group.value,
            "horizon": self.horizon,
            "target": self.target,
            "n_columns": self.n_columns,
            "f1": self.f1,
            "auc": self.auc,
            "error": self.error,
        }


@dataclass
class AblationGrid:
    mode: str
    cells: Dict[Tuple[FeatureGroup, str, str], AblationCell]
    horizons: Tuple[str, ...] = ABLATION_HORIZONS
    groups: Tuple[FeatureGroup, ...] = GROUP_ORDER
    baseline: Dict[Tuple[str, str], Dict[str, Optional[float]]] = field(default_factory=dict)

    def cell(self, group, horizon, target):
        return self.cells[(FeatureGroup(group), horizon, target)]

    def expected_keys(self):
        return [(g, h, t) for g in self.groups for h in self.horizons for t in TARGETS]

    def is_complete(self):
        return all(key in self.cells for key in self.expected_keys())

    def auc_delta(self, group, horizon, target):
        """Cell AUC minus full-model AUC; None when either side is undefined"""
        full = self.baseline.get((horizon, target), {}).get("auc")
        cell_auc = self.cell(group, horizon, target).auc
        if full is None or cell_auc is None:
            return None
        return cell_auc - full

    def to_dict(self):
        return {
            "mode": self.mode,
            "horizons": list(self.horizons),
            "groups": [g.value for g in self.groups],
            "cells": [self.cells[key].to_dict() for key in self.expected_keys()],
            "baseline": [
                {"horizon": h, "target": t, **self.baseline[(h, t)]}
                for h in self.horizons for t in TARGETS if (h, t) in self.baseline
            ],
        }


def ablation_columns(samples: SampleSet, group, mode):
    """Column indices a cell trains on"""
    if mode == "remove_group":
        return samples.schema.indices_without(group)
    if mode == "only_group":
        return samples.schema.indices_of(group)
    raise ValueError(f"Unknown ablation mode '{mode}'")


def _evaluate_cell(samples: SampleSet, group, horizon, target, columns, grid, seed, settings):
    if len(columns) == 0:
        return AblationCell(group, horizon, target, 0, error=EmptySchema.__name__)
    try:
        result = lopo_evaluate(samples.select_columns(columns), target, grid, seed, settings)
    except MoodCamError as e:
        logging.warning(f"Ablation cell {group.value}/{horizon}/{target} failed: {e}")
        return AblationCell(group, horizon, target, len(columns), error=type(e).__name__)
    error = None
    if result.pooled_auc is None:
        error = "UndefinedMetric"
    elif result.skipped_folds:
        logging.debug(f"Ablation cell {group.value}/{horizon}/{target}: {len(result.skipped_folds)} folds skipped")
    return AblationCell(group, horizon, target, len(columns), f1=result.pooled_f1, auc=result.pooled_auc, error=error)


def run_ablation(samplesets: Mapping[str, SampleSet], mode="remove_group", grid=DEFAULT_GRID, seed=0,
                 settings: LopoSettings = LopoSettings(), horizons: Sequence[str] = ABLATION_HORIZONS,
                 groups: Sequence[FeatureGroup] = GROUP_ORDER,
                 baseline: Optional[Mapping[Tuple[str, str], Mapping[str, Optional[float]]]] = None):
    """
    Evaluate every (group, horizon, target) cell with the main run's seed.

    Cells that cannot be evaluated are kept with an error annotation, so the
    returned grid always holds len(groups) x len(horizons) x 2 cells.
    """
    if mode not in MODES:
        raise ValueError(f"Unknown ablation mode '{mode}', expected one of {MODES}")
    missing = [h for h in horizons if h not in samplesets]
    if missing:
        raise SchemaMismatch(f"Ablation needs sample sets for horizons {missing}")
    groups = tuple(FeatureGroup(g) for g in groups)

    jobs = []
    for group in groups:
        for horizon in horizons:
            samples = samplesets[horizon]
            columns = ablation_columns(samples, group, mode)
            if mode == "only_group" and len(columns) == 0:
                raise EmptySchema(f"Group '{group.value}' has no columns in the {horizon} schema")
            for target in TARGETS:
                jobs.append((samples, group, horizon, target, columns))

    logging.info(f"Ablation ({mode}): {len(jobs)} cells over {len(groups)} groups")
    inner = replace(settings, n_jobs=1)
    if settings.n_jobs == 1:
        cells = [_evaluate_cell(*job, grid, seed, inner) for job in jobs]
    else:
        cells = Parallel(n_jobs=settings.n_jobs)(delayed(_evaluate_cell)(*job, grid, seed, inner) for job in jobs)

    grid_out = AblationGrid(
        mode=mode,
        cells={(c.group, c.horizon, c.target): c for c in cells},
        horizons=tuple(horizons),
        groups=groups,
        baseline={key: dict(value) for key, value in (baseline or {}).items()},
    )
    failed = sum(1 for c in cells if c.error)
    if failed:
        logging.warning(f"Ablation ({mode}): {failed} of {len(cells)} cells carry an error annotation")
    return grid_out
