"""Threshold task: label days by relative caseload increase, balance and
split, train a random forest, report accuracy and grouped Gini importances.

delta_r(t) = (mu(t+tau) - mu(t)) / mu(t) with mu the 7-day moving average of
the caseload; a day is positive when delta_r(t) >= m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date

import numpy as np

from .errors import ValidationError
from .ingest import DailySeries


@dataclass(frozen=True)
class ThresholdSpec:
    tau: int  # prediction horizon in days
    m: float  # relative threshold; label 1 iff delta_r(t) >= m

    def __post_init__(self):
        if self.tau < 1 or self.m <= 0:
            raise ValidationError("need tau >= 1 and m > 0")


@dataclass(frozen=True)
class LabelledDays:
    days: tuple[date, ...]
    labels: np.ndarray
    excluded: int  # days dropped because mu(t) <= 0


@dataclass
class ThresholdDataset:
    X: np.ndarray  # row per kept day
    y: np.ndarray
    days: tuple[date, ...]
    train_idx: np.ndarray
    test_idx: np.ndarray
    seed: int

    @property
    def X_train(self) -> np.ndarray:
        return self.X[self.train_idx]

    @property
    def y_train(self) -> np.ndarray:
        return self.y[self.train_idx]

    @property
    def X_test(self) -> np.ndarray:
        return self.X[self.test_idx]

    @property
    def y_test(self) -> np.ndarray:
        return self.y[self.test_idx]


@dataclass
class TreeNode:
    feature: int = -1  # -1 marks a leaf
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    prediction: int = 0
    gini_decrease: float = 0.0  # weighted by node fraction of the sample


@dataclass
class Forest:
    trees: list[list[TreeNode]]
    bootstrap_indices: list[np.ndarray]
    n_features: int
    feature_names: tuple[str, ...]
    seed: int
    n_trees: int = 100
    max_depth: int = 20


def label_days(mu: DailySeries, spec: ThresholdSpec) -> LabelledDays:
    """Binary labels from the relative-increase rule; days whose horizon
    falls past the series end are dropped, days with mu(t) <= 0 excluded."""
    v = mu.values
    n = len(v) - spec.tau
    if n <= 0:
        raise ValidationError("series shorter than the prediction horizon")
    days, labels = [], []
    excluded = 0
    all_days = mu.dates()
    for t in range(n):
        if v[t] <= 0:
            excluded += 1
            continue
        delta = (v[t + spec.tau] - v[t]) / v[t]
        days.append(all_days[t])
        labels.append(1 if delta >= spec.m else 0)
    return LabelledDays(
        days=tuple(days), labels=np.array(labels, dtype=np.int64), excluded=excluded
    )


def balance_and_split(X: np.ndarray, y: np.ndarray, days, seed: int,
                      test_fraction: float = 0.25,
                      chronological: bool = False) -> ThresholdDataset:
    """Undersample the majority class to the minority size, then hold out
    test_fraction of rows (uniform random by default; `chronological` keeps
    the latest rows for testing)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    days = tuple(days)
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise ValidationError("both classes must be present")
    rng = np.random.default_rng(seed)
    m = min(len(pos), len(neg))
    keep = np.sort(
        np.concatenate([
            rng.choice(pos, size=m, replace=False),
            rng.choice(neg, size=m, replace=False),
        ])
    )
    Xb, yb = X[keep], y[keep]
    db = tuple(days[i] for i in keep)
    n = len(keep)
    n_test = max(1, int(round(n * test_fraction)))
    if chronological:
        order = np.arange(n)
    else:
        order = rng.permutation(n)
    test_idx = np.sort(order[n - n_test:])
    train_idx = np.sort(order[: n - n_test])
    return ThresholdDataset(
        X=Xb, y=yb, days=db, train_idx=train_idx, test_idx=test_idx, seed=seed
    )


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _best_split(X: np.ndarray, y: np.ndarray, feat_ids: np.ndarray):
    """Best (feature, threshold, gini decrease) over candidate features.

    Thresholds are midpoints between consecutive distinct sorted values.
    """
    n = len(y)
    parent_counts = np.bincount(y, minlength=2).astype(float)
    parent_gini = _gini(parent_counts)
    best = None  # (decrease, feature, threshold)
    for f in feat_ids:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        left_pos = np.cumsum(ys == 1)[:-1].astype(float)
        left_n = np.arange(1, n, dtype=float)
        right_pos = parent_counts[1] - left_pos
        right_n = n - left_n
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        pl = left_pos / left_n
        pr = right_pos / right_n
        gl = 1.0 - pl**2 - (1.0 - pl) ** 2
        gr = 1.0 - pr**2 - (1.0 - pr) ** 2
        dec = parent_gini - (left_n * gl + right_n * gr) / n
        dec[~valid] = -np.inf
        j = int(np.argmax(dec))
        if dec[j] > 0 and (best is None or dec[j] > best[0]):
            best = (float(dec[j]), int(f), float((xs[j] + xs[j + 1]) / 2.0))
    return best


def _grow_tree(X: np.ndarray, y: np.ndarray, max_depth: int,
               rng: np.random.Generator, n_total: int) -> list[TreeNode]:
    n_features = X.shape[1]
    mtry = math.ceil(math.sqrt(n_features))
    nodes: list[TreeNode] = []

    def build(idx: np.ndarray, depth: int) -> int:
        node_id = len(nodes)
        nodes.append(TreeNode())
        node = nodes[node_id]
        ys = y[idx]
        counts = np.bincount(ys, minlength=2)
        node.prediction = int(counts[1] > counts[0])
        if depth >= max_depth or len(idx) < 2 or counts[0] == 0 or counts[1] == 0:
            return node_id
        feat_ids = rng.choice(n_features, size=min(mtry, n_features), replace=False)
        split = _best_split(X[idx], ys, feat_ids)
        if split is None:
            return node_id
        dec, f, thr = split
        mask = X[idx, f] <= thr
        node.feature = f
        node.threshold = thr
        node.gini_decrease = dec * len(idx) / n_total
        node.left = build(idx[mask], depth + 1)
        node.right = build(idx[~mask], depth + 1)
        return node_id

    build(np.arange(len(y)), 0)
    return nodes


def train_forest(ds: ThresholdDataset, feature_names=None, n_trees: int = 100,
                 max_depth: int = 20, seed: int | None = None) -> Forest:
    """Bootstrap-aggregated Gini trees with ceil(sqrt(F)) features per split."""
    X, y = ds.X_train, ds.y_train
    if len(y) < 10:
        raise ValidationError("need at least 10 training rows")
    seed = ds.seed if seed is None else seed
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"f{j}" for j in range(X.shape[1])
    )
    trees, boots = [], []
    n = len(y)
    for t in range(n_trees):
        rng = np.random.default_rng(seed + 1000 * (t + 1))
        idx = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[idx], y[idx], max_depth, rng, n))
        boots.append(idx)
    return Forest(
        trees=trees, bootstrap_indices=boots, n_features=X.shape[1],
        feature_names=names, seed=seed, n_trees=n_trees, max_depth=max_depth,
    )


def _predict_tree(nodes: list[TreeNode], x: np.ndarray) -> int:
    i = 0
    while nodes[i].feature != -1:
        i = nodes[i].left if x[nodes[i].feature] <= nodes[i].threshold else nodes[i].right
    return nodes[i].prediction


def predict(model: Forest, X: np.ndarray) -> np.ndarray:
    """Majority vote across trees; exact ties predict class 0."""
    X = np.asarray(X, dtype=float)
    votes = np.zeros(len(X))
    for nodes in model.trees:
        votes += [_predict_tree(nodes, x) for x in X]
    return (votes > model.n_trees / 2).astype(np.int64)


def evaluate(model: Forest, ds: ThresholdDataset) -> float:
    if len(ds.test_idx) == 0:
        raise ValidationError("no test rows")
    pred = predict(model, ds.X_test)
    return float((pred == ds.y_test).mean())


def feature_importances(model: Forest) -> np.ndarray:
    """Mean over trees of total weighted Gini decrease, normalized to sum 1."""
    imp = np.zeros(model.n_features)
    for nodes in model.trees:
        for node in nodes:
            if node.feature != -1:
                imp[node.feature] += node.gini_decrease
    imp /= model.n_trees
    total = imp.sum()
    return imp / total if total > 0 else imp


def grouped_importance(model: Forest, groups: dict[str, str]) -> dict[str, float]:
    """Sum normalized per-feature importances by group tag."""
    imp = feature_importances(model)
    out: dict[str, float] = {}
    for name, value in zip(model.feature_names, imp):
        if name not in groups:
            raise ValidationError(f"feature {name!r} missing from group map")
        out[groups[name]] = out.get(groups[name], 0.0) + float(value)
    return out
