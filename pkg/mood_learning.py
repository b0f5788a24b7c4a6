#!/usr/bin/env python3
"""
MoodCam Learning
================

Model side of the pipeline. Trees, forest, SMOTE and AUC are built on numpy
so that every tie-break and random stream is pinned down; F1, confusion
counts and inner-CV splits come from scikit-learn.

- CART decision trees with Gini impurity
- random-forest Gini importance and mean-threshold feature selection
- SMOTE minority oversampling
- Mann-Whitney AUC and F1
- grouped inner-CV hyperparameter tuning
- leave-one-participant-out (LOPO) evaluation
"""

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import rankdata
from sklearn.metrics import confusion_matrix, f1_score
from sklearn.model_selection import StratifiedGroupKFold, StratifiedKFold
from sklearn.neighbors import NearestNeighbors

from errors import (
    EmptyNode, EmptyTraining, LengthMismatch, OutOfRange, SingleClass,
    SingleClassTraining, TooFewGroups, TooFewMinority, TooFewParticipants,
)
from mood_dataset import median_imputer
from mood_types import TARGETS, SampleSet

TIE_TOLERANCE = 1e-12


def derive_seed(*parts):
    """Stable 63-bit seed from any printable parts (run seed, participant id, stage name)"""
    payload = ":".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big") >> 1


# =========================
# Impurity
# =========================
def gini_impurity(class_counts):
    counts = np.asarray(class_counts, dtype=float)
    if np.any(counts < 0):
        raise OutOfRange("Class counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise EmptyNode("Gini impurity of an empty node")
    p = counts / total
    return float(1.0 - np.sum(p * p))


# =========================
# Decision tree
# =========================
@dataclass(frozen=True)
class Hyperparams:
    max_depth: Optional[int] = None
    min_samples_leaf: int = 1
    min_impurity_decrease: float = 0.0

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise OutOfRange("max_depth must be >= 0 or None")
        if self.min_samples_leaf < 1:
            raise OutOfRange("min_samples_leaf must be >= 1")
        if self.min_impurity_decrease < 0:
            raise OutOfRange("min_impurity_decrease must be >= 0")

    def simplicity_key(self):
        """Sorts simpler models first: shallower, then larger leaves"""
        depth = math.inf if self.max_depth is None else self.max_depth
        return (depth, -self.min_samples_leaf, -self.min_impurity_decrease)

    def to_dict(self):
        return asdict(self)


DEFAULT_GRID = tuple(
    Hyperparams(max_depth=depth, min_samples_leaf=leaf)
    for depth in (3, 5, 8, None)
    for leaf in (1, 5, 10)
)


@dataclass(frozen=True, eq=False)
class TreeModel:
    """
    Binary tree stored as parallel node arrays; feature == -1 marks a leaf.
    Samples with x[feature] <= threshold go left.
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    class_counts: np.ndarray
    probability: np.ndarray
    node_depth: np.ndarray
    hyperparams: Hyperparams
    n_features: int

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def depth(self):
        return int(self.node_depth.max())

    def is_leaf(self, node):
        return self.feature[node] < 0

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=int)
        for _ in range(self.depth + 1):
            feature = self.feature[node]
            active = np.flatnonzero(feature >= 0)
            if len(active) == 0:
                break
            current = node[active]
            go_left = X[active, feature[active]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])
        return node

    def predict_proba(self, X):
        """Probability of the high class for each row"""
        return self.probability[self.apply(X)]

    def predict(self, X, threshold=0.5):
        return (self.predict_proba(X) >= threshold).astype(int)


def _best_split(X, y, rows, features, feature_rank, min_samples_leaf):
    """
    Best split over the candidate features for the samples in `rows`.

    Returns (feature, threshold, impurity_decrease) with the decrease relative
    to the node, or None when no split respects min_samples_leaf. Ties go to
    the lowest-ranked feature, then the lowest threshold.
    """
    n = len(rows)
    sub = X[np.ix_(rows, features)]
    order = np.argsort(sub, axis=0, kind="stable")
    values = np.take_along_axis(sub, order, axis=0)
    labels = y[rows][order].astype(float)

    n_left = np.arange(1, n, dtype=float)[:, None]
    n_right = n - n_left
    pos_left = np.cumsum(labels, axis=0)[:-1]
    pos_total = labels[:, 0].sum()
    p_left = pos_left / n_left
    p_right = (pos_total - pos_left) / n_right
    parent = 2.0 * (pos_total / n) * (1.0 - pos_total / n)
    child = (n_left * 2.0 * p_left * (1.0 - p_left) + n_right * 2.0 * p_right * (1.0 - p_right)) / n
    decrease = parent - child

    valid = (values[1:] > values[:-1]) & (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
    if not valid.any():
        return None
    decrease = np.where(valid, decrease, -np.inf)
    best = decrease.max()
    positions, columns = np.nonzero(decrease >= best - TIE_TOLERANCE)
    thresholds = (values[positions, columns] + values[positions + 1, columns]) / 2.0
    ranks = feature_rank[np.asarray(features)[columns]]
    pick = np.lexsort((thresholds, ranks))[0]
    return int(features[columns[pick]]), float(thresholds[pick]), float(decrease[positions[pick], columns[pick]])


def _grow_tree(X, y, hyperparams, rng=None, max_features=None, feature_rank=None, importances=None):
    n_samples, n_features = X.shape
    if feature_rank is None:
        feature_rank = np.arange(n_features)
    canonical = np.argsort(feature_rank, kind="stable")
    max_depth = math.inf if hyperparams.max_depth is None else hyperparams.max_depth
    min_leaf = hyperparams.min_samples_leaf

    feature, threshold, left, right, counts, depths = [], [], [], [], [], []

    def new_node(rows, depth):
        positives = int(y[rows].sum())
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        counts.append((len(rows) - positives, positives))
        depths.append(depth)
        return len(feature) - 1

    stack = [(new_node(np.arange(n_samples), 0), np.arange(n_samples), 0)]
    while stack:
        node, rows, depth = stack.pop()
        n0, n1 = counts[node]
        if depth >= max_depth or len(rows) < 2 * min_leaf or n0 == 0 or n1 == 0:
            continue
        if max_features is not None and max_features < n_features:
            chosen = np.sort(rng.choice(n_features, size=max_features, replace=False))
            candidates = canonical[chosen]
        else:
            candidates = canonical
        split = _best_split(X, y, rows, candidates, feature_rank, min_leaf)
        if split is None:
            continue
        f, t, decrease = split
        weighted = len(rows) / n_samples * decrease
        if weighted < hyperparams.min_impurity_decrease:
            continue
        if importances is not None:
            importances[f] += weighted
        go_left = X[rows, f] <= t
        left_rows, right_rows = rows[go_left], rows[~go_left]
        feature[node], threshold[node] = f, t
        left[node] = new_node(left_rows, depth + 1)
        right[node] = new_node(right_rows, depth + 1)
        stack.append((right[node], right_rows, depth + 1))
        stack.append((left[node], left_rows, depth + 1))

    class_counts = np.array(counts, dtype=float)
    probability = class_counts[:, 1] / class_counts.sum(axis=1)
    return TreeModel(
        feature=np.array(feature, dtype=int),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=int),
        right=np.array(right, dtype=int),
        class_counts=class_counts,
        probability=probability,
        node_depth=np.array(depths, dtype=int),
        hyperparams=hyperparams,
        n_features=n_features,
    )


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    if X.ndim != 2:
        X = X.reshape(len(X), -1)
    if len(X) != len(y):
        raise LengthMismatch(f"X has {len(X)} rows but y has {len(y)} labels")
    if len(y) == 0:
        raise EmptyTraining("No training samples")
    if not np.isin(y, (0, 1)).all():
        raise OutOfRange("Labels must be binary")
    return X, y


def train_decision_tree(X, y, hyperparams: Hyperparams = Hyperparams(), seed=0, max_features=None):
    """
    Greedy CART induction scanning every midpoint threshold at each node.

    With max_features set, each node scans a feature subset drawn from `seed`;
    otherwise every feature is scanned and the seed has no effect.
    """
    X, y = _check_xy(X, y)
    return _grow_tree(X, y, hyperparams, rng=np.random.default_rng(seed), max_features=max_features)


# =========================
# Forest importance and selection
# =========================
@dataclass(frozen=True, eq=False)
class ForestImportance:
    importances: np.ndarray
    n_trees: int
    seed: int

    def __post_init__(self):
        values = np.array(self.importances, dtype=float)
        if np.any(values < 0):
            raise OutOfRange("Importances must be non-negative")
        if len(values) and abs(values.sum() - 1.0) > 1e-9:
            raise OutOfRange("Importances must sum to 1")
        values.setflags(write=False)
        object.__setattr__(self, "importances", values)


def default_max_features(n_features):
    return max(1, math.ceil(math.sqrt(n_features)))


def _importance_tree(X, y, seed_sequence, max_features, feature_rank):
    rng = np.random.default_rng(seed_sequence)
    sample = rng.integers(0, len(y), size=len(y))
    importances = np.zeros(X.shape[1])
    _grow_tree(X[sample], y[sample], Hyperparams(), rng=rng, max_features=max_features,
               feature_rank=feature_rank, importances=importances)
    return importances


def rf_gini_importance(X, y, n_trees=100, seed=0, max_features=None, column_keys=None, n_jobs=1):
    """
    Mean decrease in Gini impurity over a bootstrap forest with random feature subspaces.

    column_keys fixes the canonical column order used for subspace draws and
    tie-breaks, so permuting columns together with their keys permutes the
    importances identically.
    """
    X, y = _check_xy(X, y)
    if len(y) < 2:
        raise EmptyTraining("Forest importance needs at least 2 samples")
    if len(np.unique(y)) < 2:
        raise SingleClass("Forest importance needs both classes")
    n_features = X.shape[1]
    max_features = default_max_features(n_features) if max_features is None else min(int(max_features), n_features)
    keys = np.arange(n_features) if column_keys is None else np.asarray(column_keys)
    feature_rank = np.empty(n_features, dtype=int)
    feature_rank[np.argsort(keys, kind="stable")] = np.arange(n_features)

    children = np.random.SeedSequence(seed).spawn(n_trees)
    if n_jobs == 1:
        per_tree = [_importance_tree(X, y, child, max_features, feature_rank) for child in children]
    else:
        per_tree = Parallel(n_jobs=n_jobs)(
            delayed(_importance_tree)(X, y, child, max_features, feature_rank) for child in children
        )
    total = np.mean(per_tree, axis=0)
    if total.sum() <= 0:
        importances = np.full(n_features, 1.0 / n_features)
    else:
        importances = total / total.sum()
    return ForestImportance(importances=importances, n_trees=n_trees, seed=seed)


def select_features(importances: ForestImportance):
    """Indices whose importance is strictly above the mean (1/d); all indices if none is"""
    values = importances.importances
    threshold = 1.0 / len(values)
    selected = np.flatnonzero(values > threshold + TIE_TOLERANCE)
    if len(selected) == 0:
        selected = np.arange(len(values))
    return selected


# =========================
# SMOTE
# =========================
def smote(X, y, k=5, seed=0, return_origins=False):
    """
    Append synthetic minority rows until both classes have equal counts.

    Each synthetic row interpolates a uniformly drawn minority row towards one
    of its min(k, m-1) nearest minority neighbours. With return_origins the
    source row index of every output row is returned as well.
    """
    X, y = _check_xy(X, y)
    classes, class_counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise SingleClass("SMOTE needs both classes")
    origins = np.arange(len(y))
    if class_counts[0] == class_counts[1]:
        return (X, y, origins) if return_origins else (X, y)
    minority_label = classes[np.argmin(class_counts)]
    minority_rows = np.flatnonzero(y == minority_label)
    m = len(minority_rows)
    if m < 2:
        raise TooFewMinority(f"SMOTE needs at least 2 minority rows, got {m}")
    n_new = int(class_counts.max() - class_counts.min())

    minority = X[minority_rows]
    n_neighbors = min(k, m - 1)
    neighbours = NearestNeighbors(n_neighbors=n_neighbors, algorithm="brute").fit(minority)
    neighbour_index = neighbours.kneighbors(return_distance=False)

    rng = np.random.default_rng(seed)
    base = rng.integers(0, m, size=n_new)
    pick = rng.integers(0, n_neighbors, size=n_new)
    gap = rng.random(n_new)[:, None]
    partner = neighbour_index[base, pick]
    synthetic = minority[base] + gap * (minority[partner] - minority[base])

    X_out = np.vstack([X, synthetic])
    y_out = np.concatenate([y, np.full(n_new, minority_label)])
    if return_origins:
        return X_out, y_out, np.concatenate([origins, minority_rows[base]])
    return X_out, y_out


# =========================
# Metrics
# =========================
def auc(scores, labels):
    """Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly, ties counting one half"""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if len(scores) != len(labels):
        raise LengthMismatch("scores and labels differ in length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = rankdata(scores, method="average")
    u_statistic = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def confusion_counts(predictions, labels, positive=1):
    predictions = np.asarray(predictions).astype(int)
    labels = np.asarray(labels).astype(int)
    if len(predictions) != len(labels):
        raise LengthMismatch("predictions and labels differ in length")
    tn, fp, fn, tp = confusion_matrix(labels, predictions, labels=[1 - positive, positive]).ravel()
    return {"tp": int(tp), "fp": int(fp), "fn": int(fn), "tn": int(tn)}


def f1(predictions, labels, positive=1):
    """F1 for the given positive class; 0 when there is no true positive"""
    predictions = np.asarray(predictions).astype(int)
    labels = np.asarray(labels).astype(int)
    if len(predictions) != len(labels):
        raise LengthMismatch("predictions and labels differ in length")
    return float(f1_score(labels, predictions, pos_label=positive, average="binary", zero_division=0))


def f1_is_degenerate(predictions, labels, positive=1):
    """No positive prediction and no positive label: F1 is 0 by convention only"""
    c = confusion_counts(predictions, labels, positive)
    return c["tp"] + c["fp"] == 0 and c["tp"] + c["fn"] == 0


# =========================
# Hyperparameter tuning
# =========================
def _fold_ids(splitter, y, groups=None):
    folds = np.zeros(len(y), dtype=int)
    for fold, (_, test) in enumerate(splitter.split(np.zeros((len(y), 1)), y, groups)):
        folds[test] = fold
    return folds


def inner_folds(y, groups, n_folds, seed):
    """Grouped, class-stratified fold ids; TooFewGroups when fewer than 2 groups exist"""
    y = np.asarray(y).astype(int)
    groups = np.asarray(groups)
    n_groups = len(np.unique(groups))
    if n_groups < 2:
        raise TooFewGroups(f"Grouped inner CV needs at least 2 groups, got {n_groups}")
    splitter = StratifiedGroupKFold(n_splits=min(n_folds, n_groups), shuffle=True, random_state=seed % 2 ** 32)
    return _fold_ids(splitter, y, groups)


def stratified_row_folds(y, n_folds, seed):
    """Row-level stratified fold ids, for training data from a single group"""
    y = np.asarray(y).astype(int)
    n_splits = min(n_folds, int(np.bincount(y).max()))
    if n_splits < 2:
        return np.zeros(len(y), dtype=int)
    splitter = StratifiedKFold(n_splits=n_splits, shuffle=True, random_state=seed % 2 ** 32)
    return _fold_ids(splitter, y)


def _inner_auc(X, y, folds, hyperparams):
    fold_aucs = []
    pooled_scores = np.zeros(len(y))
    for fold in np.unique(folds):
        train, test = folds != fold, folds == fold
        if train.sum() == 0:
            continue
        tree = _grow_tree(X[train], y[train], hyperparams)
        pooled_scores[test] = tree.predict_proba(X[test])
        if len(np.unique(y[test])) == 2:
            fold_aucs.append(auc(pooled_scores[test], y[test]))
    if fold_aucs:
        return float(np.mean(fold_aucs))
    if len(np.unique(y)) == 2:
        return auc(pooled_scores, y)
    return 0.5


def tune_hyperparams(X_train, y_train, groups, grid: Sequence[Hyperparams] = DEFAULT_GRID, seed=0, n_folds=3):
    """
    Grid point with the best mean inner-CV AUC over grouped folds.

    Ties go to the simpler configuration. Returns (best, info) where info holds
    the per-point scores and whether the row-level fallback split was used.
    """
    X, y = _check_xy(X_train, y_train)
    groups = np.asarray(groups)
    grid = list(grid)
    if not grid:
        raise OutOfRange("Hyperparameter grid is empty")
    info = {"fallback": None, "scores": []}
    if len(grid) == 1:
        return grid[0], info

    try:
        folds = inner_folds(y, groups, n_folds, seed)
    except TooFewGroups as e:
        logging.warning(f"{e}; falling back to a stratified row-level {n_folds}-fold split")
        info["fallback"] = "stratified_rows"
        folds = stratified_row_folds(y, n_folds, seed)

    scored = []
    for point in grid:
        score = _inner_auc(X, y, folds, point)
        scored.append((point, score))
        info["scores"].append({"hyperparams": point.to_dict(), "inner_auc": score})
    best_score = max(score for _, score in scored)
    tied = [point for point, score in scored if score >= best_score - TIE_TOLERANCE]
    best = min(tied, key=lambda p: p.simplicity_key())
    logging.debug(f"Tuning picked {best} (inner AUC {best_score:.4f})")
    return best, info


# =========================
# LOPO evaluation
# =========================
@dataclass(frozen=True)
class LopoSettings:
    n_trees: int = 100
    max_features: Optional[int] = None
    smote_k: int = 5
    inner_folds: int = 3
    threshold: float = 0.5
    n_jobs: int = 1


@dataclass(frozen=True)
class FoldAudit:
    """Row ids that entered each training stage of a fold"""
    selection_rows: Tuple[str, ...]
    smote_rows: Tuple[str, ...]
    tuning_rows: Tuple[str, ...]
    fit_rows: Tuple[str, ...]

    def digest(self):
        h = hashlib.sha256()
        for stage in (self.selection_rows, self.smote_rows, self.tuning_rows, self.fit_rows):
            h.update("\n".join(stage).encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


@dataclass
class FoldResult:
    held_out_participant: str
    n_test: int
    status: str = "ok"
    f1: Optional[float] = None
    auc: Optional[float] = None
    f1_low: Optional[float] = None
    confusion: Optional[Dict[str, int]] = None
    selected_feature_indices: Tuple[int, ...] = ()
    best_hyperparams: Optional[Dict] = None
    smote_applied: bool = False
    tuning_fallback: Optional[str] = None
    error: Optional[str] = None
    audit: Optional[FoldAudit] = None

    def to_dict(self, schema_names=None):
        out = {
            "held_out_participant": self.held_out_participant,
            "status": self.status,
            "n_test": self.n_test,
            "f1": self.f1,
            "auc": self.auc,
            "f1_low": self.f1_low,
            "confusion": self.confusion,
            "n_selected_features": len(self.selected_feature_indices),
            "best_hyperparams": self.best_hyperparams,
            "smote_applied": self.smote_applied,
            "tuning_fallback": self.tuning_fallback,
            "error": self.error,
        }
        if schema_names is not None:
            out["selected_features"] = [schema_names[i] for i in self.selected_feature_indices]
        if self.audit is not None:
            out["audit_digest"] = self.audit.digest()
            out["n_training_rows"] = len(self.audit.fit_rows)
        return out


@dataclass
class LopoResult:
    target: str
    folds: List[FoldResult]
    predictions: pd.DataFrame
    pooled_f1: Optional[float] = None
    pooled_auc: Optional[float] = None
    pooled_f1_low: Optional[float] = None
    mean_fold_f1: Optional[float] = None
    mean_fold_auc: Optional[float] = None
    f1_degenerate: bool = False

    @property
    def skipped_folds(self):
        return [fold for fold in self.folds if fold.status != "ok"]


def _run_fold(participant, X, y, row_ids, groups, grid, seed, settings: LopoSettings):
    test = groups == participant
    train = ~test
    result = FoldResult(held_out_participant=str(participant), n_test=int(test.sum()))
    y_train = y[train]
    if len(np.unique(y_train)) < 2:
        result.status = "skipped"
        result.error = SingleClassTraining.__name__
        logging.warning(f"Fold {participant}: training partition has a single class, fold skipped")
        return result, None

    imputer = median_imputer()
    X_train = imputer.fit_transform(X[train])
    X_test = imputer.transform(X[test])
    train_ids = row_ids[train]
    train_groups = groups[train]

    importance = rf_gini_importance(X_train, y_train, settings.n_trees, derive_seed(seed, participant, "forest"),
                                    settings.max_features)
    selected = select_features(importance)
    X_sel = X_train[:, selected]

    try:
        X_fit, y_fit, origins = smote(X_sel, y_train, settings.smote_k, derive_seed(seed, participant, "smote"),
                                      return_origins=True)
        result.smote_applied = True
    except TooFewMinority as e:
        logging.warning(f"Fold {participant}: {e}; training without oversampling")
        X_fit, y_fit, origins = X_sel, y_train, np.arange(len(y_train))

    best, info = tune_hyperparams(X_fit, y_fit, train_groups[origins], grid,
                                  derive_seed(seed, participant, "tune"), settings.inner_folds)
    tree = train_decision_tree(X_fit, y_fit, best, derive_seed(seed, participant, "fit"))
    probability = tree.predict_proba(X_test[:, selected])
    prediction = (probability >= settings.threshold).astype(int)
    y_test = y[test]

    result.selected_feature_indices = tuple(int(i) for i in selected)
    result.best_hyperparams = best.to_dict()
    result.tuning_fallback = info["fallback"]
    result.confusion = confusion_counts(prediction, y_test)
    if len(np.unique(y_test)) == 2:
        result.f1 = f1(prediction, y_test)
        result.f1_low = f1(prediction, y_test, positive=0)
        result.auc = auc(probability, y_test)
    result.audit = FoldAudit(
        selection_rows=tuple(train_ids),
        smote_rows=tuple(train_ids),
        tuning_rows=tuple(sorted(set(train_ids[origins].tolist()))),
        fit_rows=tuple(sorted(set(train_ids[origins].tolist()))),
    )
    predictions = pd.DataFrame({
        "row_id": row_ids[test],
        "participant_id": groups[test],
        "label": y_test,
        "probability": probability,
        "prediction": prediction,
    })
    logging.debug(f"Fold {participant}: {len(selected)} features, {best}, n_test={result.n_test}")
    return result, predictions


def lopo_evaluate(samples: SampleSet, target, grid: Sequence[Hyperparams] = DEFAULT_GRID, seed=0,
                  settings: LopoSettings = LopoSettings(), held_out: Optional[Sequence[str]] = None):
    """
    Leave-one-participant-out evaluation of the full training pipeline.

    Each fold runs, on the other participants' rows only: median imputation,
    forest feature selection, SMOTE, grouped hyperparameter tuning and the
    final tree fit, then scores the held-out participant. Pooled metrics are
    computed over all held-out predictions; per-fold metrics only where the
    held-out participant has both classes.
    """
    if target not in TARGETS:
        raise OutOfRange(f"Unknown target '{target}'")
    groups = samples.participants
    participants = sorted(set(groups.tolist()))
    if len(participants) < 2:
        raise TooFewParticipants(f"LOPO needs at least 2 participants, got {len(participants)}")
    if held_out is not None:
        participants = [p for p in participants if p in set(held_out)]
    X = np.asarray(samples.features, dtype=float)
    y = samples.labels(target)
    row_ids = samples.row_ids
    grid = tuple(grid)

    if settings.n_jobs == 1:
        outcomes = [_run_fold(p, X, y, row_ids, groups, grid, seed, settings) for p in participants]
    else:
        outcomes = Parallel(n_jobs=settings.n_jobs)(
            delayed(_run_fold)(p, X, y, row_ids, groups, grid, seed, settings) for p in participants
        )

    folds = [fold for fold, _ in outcomes]
    frames = [pred for _, pred in outcomes if pred is not None]
    columns = ["row_id", "participant_id", "label", "probability", "prediction"]
    predictions = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)
    return summarize_predictions(target, folds, predictions)


def summarize_predictions(target, folds: List[FoldResult], predictions: pd.DataFrame):
    """Pooled and per-fold-mean metrics over held-out predictions"""
    result = LopoResult(target=target, folds=folds, predictions=predictions)
    if len(predictions):
        labels = predictions["label"].to_numpy(dtype=int)
        prediction = predictions["prediction"].to_numpy(dtype=int)
        result.pooled_f1 = f1(prediction, labels)
        result.pooled_f1_low = f1(prediction, labels, positive=0)
        result.f1_degenerate = f1_is_degenerate(prediction, labels)
        if len(np.unique(labels)) == 2:
            result.pooled_auc = auc(predictions["probability"].to_numpy(dtype=float), labels)
    defined = [fold for fold in folds if fold.auc is not None]
    if defined:
        result.mean_fold_f1 = float(np.mean([fold.f1 for fold in defined]))
        result.mean_fold_auc = float(np.mean([fold.auc for fold in defined]))
    evaluated = sum(1 for fold in folds if fold.status == "ok")
    auc_text = f"{result.pooled_auc:.3f}" if result.pooled_auc is not None else "n/a"
    f1_text = f"{result.pooled_f1:.3f}" if result.pooled_f1 is not None else "n/a"
    logging.info(f"LOPO {target}: {evaluated}/{len(folds)} folds evaluated, pooled F1={f1_text} AUC={auc_text}")
    return result
