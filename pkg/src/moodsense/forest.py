"""From-scratch CART forest, Cohen's kappa, and the replicated 70/30 protocol.

Trees grow greedily: each node samples ``n_features_per_split`` features
without replacement and takes the (feature, threshold) pair minimizing the
weighted child Gini over midpoints of sorted distinct values, stopping on
purity, ``min_leaf`` or ``max_depth``. The forest bags one n-sized bootstrap
resample per tree.

Determinism: every tree owns splitmix64 streams derived from (seed, tree
index), and replicates own streams derived from (seed, replicate index), so
results do not depend on execution order and are reproducible bit for bit.
Training is row-order-dependent: bootstrap draws address row positions, so
permuting the training rows under the same seed generally changes the model
(this is asserted in the test suite).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .core import FeatureRow, feature_matrix, row_value
from .kernels import bulk_values, derive_seed

log = logging.getLogger(__name__)

#: Predictors used for classification, GPS excluded.
BASE_CLASSIFIER_FEATURES = (
    "avg_bpm",
    "light_level",
    "acceleration",
    "vmc",
    "weekend_holiday",
    "gender_male",
    "age",
    "weight",
    "sportiness",
    "neuroticism",
    "extraversion",
    "openness",
    "agreeableness",
    "conscientiousness",
)

GPS_FEATURES = ("latitude", "longitude", "altitude")

CLASSIFIER_OUTCOMES = ("happiness", "activation", "mood_state")

_UNLIMITED_DEPTH = 2**31 - 1


class KappaDegenerateWarning(UserWarning):
    """Expected agreement is 1; kappa is defined as 0 in this case."""


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    n_features_per_split: Optional[int] = None  # default: ceil(sqrt(p))
    min_leaf: int = 1
    max_depth: Optional[int] = None  # None = unlimited

    def resolve_k(self, n_features: int) -> int:
        if self.n_features_per_split is not None:
            return min(self.n_features_per_split, n_features)
        return min(math.ceil(math.sqrt(n_features)), n_features)

    def resolve_depth(self) -> int:
        return _UNLIMITED_DEPTH if self.max_depth is None else self.max_depth


@dataclass(frozen=True)
class EvalConfig:
    forest: ForestConfig = field(default_factory=ForestConfig)
    n_replicates: int = 100
    test_fraction: float = 0.30
    stratified: bool = False
    max_redraws_per_replicate: int = 100
    min_rows_per_class: int = 10


def gini_impurity(class_counts: Sequence[float]) -> float:
    """CART impurity 1 - sum((c_i/n)^2); zero iff the node is pure."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.size == 0 or np.any(counts < 0):
        raise ValueError(f"class counts must be non-negative, got {class_counts!r}")
    total = counts.sum()
    if total <= 0:
        raise ValueError("class counts sum to zero")
    frac = counts / total
    return float(1.0 - np.dot(frac, frac))


@dataclass(frozen=True)
class DecisionTree:
    """Flat-array binary tree; feature[k] == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # per-node class counts over the training rows reaching it

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        best = 0
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                depths[self.left[k]] = depths[k] + 1
                depths[self.right[k]] = depths[k] + 1
            else:
                best = max(best, int(depths[k]))
        return best

    def leaf_majorities(self) -> np.ndarray:
        """Per-node majority class index; ties go to the smallest index."""
        return np.argmax(self.counts, axis=1).astype(np.int64)

    def predict_indices(self, X: np.ndarray) -> np.ndarray:
        starts = np.array([0, self.n_nodes], dtype=np.int64)
        votes = kernels.predict_votes(
            np.ascontiguousarray(X, dtype=np.float64),
            self.feature,
            self.threshold,
            self.left,
            self.right,
            self.leaf_majorities(),
            starts,
        )
        return np.argmax(votes, axis=1)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    classes: np.ndarray  # sorted original labels
    feature_names: tuple
    n_features_per_split: int
    seed: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @cached_property
    def _packed(self):
        starts = np.zeros(len(self.trees) + 1, dtype=np.int64)
        for i, t in enumerate(self.trees):
            starts[i + 1] = starts[i] + t.n_nodes
        feature = np.concatenate([t.feature for t in self.trees])
        threshold = np.concatenate([t.threshold for t in self.trees])
        left = np.concatenate([t.left for t in self.trees])
        right = np.concatenate([t.right for t in self.trees])
        leaf_class = np.concatenate([t.leaf_majorities() for t in self.trees])
        for i, t in enumerate(self.trees):
            sl = slice(starts[i], starts[i + 1])
            internal = feature[sl] >= 0
            left[sl][internal] += starts[i]
            right[sl][internal] += starts[i]
        return feature, threshold, left, right, leaf_class, starts

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Plurality vote over trees; ties break to the smallest class label."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValueError(
                f"expected ({'n'}, {len(self.feature_names)}) feature matrix, got {X.shape}"
            )
        feature, threshold, left, right, leaf_class, starts = self._packed
        votes = kernels.predict_votes(X, feature, threshold, left, right, leaf_class, starts)
        if votes.shape[1] < len(self.classes):
            pad = np.zeros((votes.shape[0], len(self.classes) - votes.shape[1]), dtype=np.int64)
            votes = np.hstack([votes, pad])
        return self.classes[np.argmax(votes, axis=1)]


def _as_index_labels(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    classes = np.unique(y)
    return classes, np.searchsorted(classes, y).astype(np.int64)


def train_tree(
    X: np.ndarray,
    y: np.ndarray,
    config: ForestConfig = ForestConfig(),
    seed: int = 0,
    row_idx: Optional[np.ndarray] = None,
    n_classes: Optional[int] = None,
) -> DecisionTree:
    """Grow one tree on (a subset of) the given rows. Deterministic per seed."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if config.min_leaf < 1:
        raise ValueError(f"min_leaf must be >= 1, got {config.min_leaf}")
    if X.shape[0] < 2 * config.min_leaf:
        raise ValueError(f"need at least {2 * config.min_leaf} rows, got {X.shape[0]}")
    if X.shape[1] < 1:
        raise ValueError("need at least one feature")
    if row_idx is None:
        row_idx = np.arange(X.shape[0], dtype=np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    feat_seed = np.uint64(derive_seed(seed, 1))
    feature, threshold, left, right, counts, _ = kernels.grow_tree(
        X,
        y,
        np.asarray(row_idx, dtype=np.int64),
        n_classes,
        config.resolve_k(X.shape[1]),
        config.min_leaf,
        config.resolve_depth(),
        feat_seed,
    )
    return DecisionTree(feature, threshold, left, right, counts)


def train_forest(
    X: np.ndarray,
    y: np.ndarray,
    config: ForestConfig = ForestConfig(),
    seed: int = 0,
    feature_names: Optional[Sequence[str]] = None,
) -> ForestModel:
    """Bag ``n_trees`` bootstrap trees. Deterministic per seed."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("training set is empty")
    classes, y_idx = _as_index_labels(y)
    n = X.shape[0]
    trees = []
    for t in range(config.n_trees):
        tree_seed = derive_seed(seed, t)
        boot = (bulk_values(derive_seed(tree_seed, 0), n) % np.uint64(n)).astype(np.int64)
        trees.append(
            train_tree(
                X, y_idx, config, seed=tree_seed, row_idx=boot, n_classes=len(classes)
            )
        )
    names = tuple(feature_names) if feature_names else tuple(f"f{i}" for i in range(X.shape[1]))
    return ForestModel(
        trees=tuple(trees),
        classes=classes,
        feature_names=names,
        n_features_per_split=config.resolve_k(X.shape[1]),
        seed=seed,
    )


def predict_class(model: ForestModel, row: FeatureRow):
    """Classify one feature row; rejects rows missing a model feature."""
    values = np.empty((1, len(model.feature_names)))
    for j, name in enumerate(model.feature_names):
        v = row_value(row, name)
        if math.isnan(v):
            raise ValueError(f"row is missing feature {name!r}")
        values[0, j] = v
    return model.predict(values)[0]


def confusion_matrix(true_idx: np.ndarray, pred_idx: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (true_idx, pred_idx), 1)
    return out


def cohen_kappa(confusion: np.ndarray) -> float:
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e).

    A matrix whose expected agreement is 1 (all mass in one row and column)
    makes kappa 0/0; it is defined as 0 here and flagged with
    KappaDegenerateWarning.
    """
    c = np.asarray(confusion, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.size == 0:
        raise ValueError(f"confusion matrix must be square and non-empty, got {c.shape}")
    if np.any(c < 0):
        raise ValueError("confusion matrix entries must be non-negative")
    total = c.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    p_o = float(np.trace(c)) / total
    p_e = float(c.sum(axis=1) @ c.sum(axis=0)) / (total * total)
    if 1.0 - p_e < 1e-15:
        warnings.warn(
            "expected agreement is 1; kappa is degenerate and reported as 0",
            KappaDegenerateWarning,
        )
        return 0.0
    return (p_o - p_e) / (1.0 - p_e)


def accuracy(confusion: np.ndarray) -> float:
    c = np.asarray(confusion, dtype=np.float64)
    return float(np.trace(c) / c.sum())


@dataclass(frozen=True)
class ExperimentReport:
    outcome: str
    include_gps: bool
    accuracies: tuple
    kappas: tuple
    n_rows: int
    n_redraws: int
    n_dropped_rows: int

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def mean_kappa(self) -> float:
        return float(np.mean(self.kappas))


def _eval_matrix(rows, outcome, include_gps):
    feats = BASE_CLASSIFIER_FEATURES + (GPS_FEATURES if include_gps else ())
    data = feature_matrix(rows, feats + (outcome,))
    complete = np.isfinite(data).all(axis=1)
    dropped = int((~complete).sum())
    if dropped:
        log.info("dropping %d rows with missing values before classification", dropped)
    data = data[complete]
    return data[:, :-1], data[:, -1].astype(np.int64), feats, dropped


def _draw_split(rng, n, n_test, stratified, y_idx, n_classes):
    if not stratified:
        perm = rng.permutation(n)
        return perm[:n_test], perm[n_test:]
    test_parts = []
    for c in range(n_classes):
        members = np.nonzero(y_idx == c)[0]
        k = int(round(len(members) * n_test / n))
        test_parts.append(rng.permutation(members)[:k])
    test = np.concatenate(test_parts)
    mask = np.ones(n, dtype=bool)
    mask[test] = False
    return test, np.nonzero(mask)[0]


def replicated_evaluation_matrix(
    X: np.ndarray,
    y: np.ndarray,
    config: EvalConfig = EvalConfig(),
    seed: int = 0,
    outcome: str = "",
    include_gps: bool = False,
    n_dropped: int = 0,
) -> ExperimentReport:
    """Train/test ``n_replicates`` times on fresh uniform 30% test splits."""
    n = X.shape[0]
    classes, y_idx = _as_index_labels(y)
    class_counts = np.bincount(y_idx)
    if np.any(class_counts < config.min_rows_per_class):
        raise ValueError(
            f"need at least {config.min_rows_per_class} rows per class, got {class_counts.tolist()}"
        )
    n_test = max(1, int(round(config.test_fraction * n)))
    if n_test >= n:
        raise ValueError("test fraction leaves no training rows")

    accuracies = []
    kappas = []
    redraws = 0
    for rep in range(config.n_replicates):
        for attempt in range(config.max_redraws_per_replicate):
            rng = np.random.default_rng(derive_seed(seed, rep, attempt))
            test, train = _draw_split(rng, n, n_test, config.stratified, y_idx, len(classes))
            if len(np.unique(y_idx[train])) == len(classes):
                break
            redraws += 1
            log.info("replicate %d: training split lacks a class, redrawing", rep)
        else:
            raise RuntimeError(f"replicate {rep}: no valid split after {attempt + 1} draws")
        model = train_forest(
            X[train], y[train], config.forest, seed=derive_seed(seed, rep, 1_000_003)
        )
        pred = model.predict(X[test])
        pred_idx = np.searchsorted(classes, pred)
        cm = confusion_matrix(y_idx[test], pred_idx, len(classes))
        accuracies.append(accuracy(cm))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", KappaDegenerateWarning)
            kappas.append(cohen_kappa(cm))
    return ExperimentReport(
        outcome=outcome,
        include_gps=include_gps,
        accuracies=tuple(accuracies),
        kappas=tuple(kappas),
        n_rows=n,
        n_redraws=redraws,
        n_dropped_rows=n_dropped,
    )


def replicated_evaluation(
    rows: Sequence[FeatureRow],
    outcome: str,
    config: EvalConfig = EvalConfig(),
    seed: int = 0,
    include_gps: bool = False,
) -> ExperimentReport:
    if outcome not in CLASSIFIER_OUTCOMES:
        raise ValueError(f"outcome must be one of {CLASSIFIER_OUTCOMES}, got {outcome!r}")
    X, y, _, dropped = _eval_matrix(rows, outcome, include_gps)
    return replicated_evaluation_matrix(
        X, y, config, seed, outcome=outcome, include_gps=include_gps, n_dropped=dropped
    )


@dataclass(frozen=True)
class AblationGrid:
    """Accuracy/kappa for each outcome with and without the GPS features."""

    reports: dict

    def report(self, outcome: str, include_gps: bool) -> ExperimentReport:
        return self.reports[(outcome, include_gps)]

    def gap(self, outcome: str) -> float:
        with_gps = self.report(outcome, True).mean_accuracy
        without = self.report(outcome, False).mean_accuracy
        return with_gps - without


def gps_ablation(
    rows: Sequence[FeatureRow],
    seed: int = 0,
    config: EvalConfig = EvalConfig(),
    outcomes: Sequence[str] = CLASSIFIER_OUTCOMES,
) -> AblationGrid:
    """Re-run the replicated protocol with and without latitude/longitude/altitude.

    Both arms run on the same GPS-complete row set so the comparison isolates
    the features, not the sample.
    """
    gps_rows = [r for r in rows if r.gps_present]
    if not gps_rows:
        raise ValueError("GPS ablation needs rows that carry GPS fields")
    if len(gps_rows) < len(rows):
        log.info("GPS ablation: using %d of %d rows that carry GPS", len(gps_rows), len(rows))
    reports = {}
    for i, outcome in enumerate(outcomes):
        for include_gps in (True, False):
            reports[(outcome, include_gps)] = replicated_evaluation(
                gps_rows,
                outcome,
                config,
                seed=derive_seed(seed, i, int(include_gps)),
                include_gps=include_gps,
            )
    return AblationGrid(reports)
