"""Gini classification trees and bootstrap random forests.

Leaves store the positive fraction with Laplace smoothing, ``(pos + 1) /
(total + 2)``, so no tree ever predicts exactly 0 or 1.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..exceptions import ConfigurationError, UnsupportedOperationError, UsageError

MAX_SEED = 2**31 - 1


def leaf_probability(positives: int, total: int) -> float:
    return (positives + 1.0) / (total + 2.0)


def _best_split(X, y, features, min_leaf):
    """Lowest weighted Gini split over ``features``; ``None`` if nothing improves."""
    n = y.size
    pos = y.sum()
    p = pos / n
    best_score = 2.0 * p * (1.0 - p) - 1e-12
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cum = np.cumsum(y[order])[:-1]
        n_left = np.arange(1, n)
        n_right = n - n_left
        valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        pl = cum / n_left
        pr = (pos - cum) / n_right
        score = (n_left * 2 * pl * (1 - pl) + n_right * 2 * pr * (1 - pr)) / n
        score = np.where(valid, score, np.inf)
        i = int(np.argmin(score))
        if score[i] < best_score:
            best_score = score[i]
            thr = 0.5 * (xs[i] + xs[i + 1])
            if not xs[i] <= thr < xs[i + 1]:
                thr = xs[i]
            best = (int(f), float(thr))
    return best


class GiniTree(ClassifierMixin, BaseEstimator):
    """Binary classification tree grown on Gini impurity.

    ``max_features`` features are drawn without replacement at every split.
    Samples with ``x[feature] <= threshold`` go left.
    """

    def __init__(self, max_depth=4, min_leaf=1, max_features=None, random_state=None):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.random_state = random_state

    def _n_split_features(self, m):
        k = m if self.max_features is None else int(self.max_features)
        if not 1 <= k <= max(m, 1):
            raise ConfigurationError(f"max_features must lie in 1..{m}, got {self.max_features}")
        return k

    def fit(self, X, y):
        if self.max_depth < 1 or self.min_leaf < 1:
            raise ConfigurationError("max_depth and min_leaf must be >= 1")
        X = check_array(X)
        y = np.asarray(y, dtype=np.int64).ravel()
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        k = self._n_split_features(X.shape[1])
        rng = np.random.default_rng(self.random_state)
        feature, threshold, left, right, positives, totals = [], [], [], [], [], []

        def grow(rows, depth):
            node = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            positives.append(int(y[rows].sum()))
            totals.append(int(rows.size))
            if depth >= self.max_depth or rows.size < 2 * self.min_leaf:
                return node
            feats = rng.choice(X.shape[1], size=k, replace=False) if X.shape[1] else []
            split = _best_split(X[rows], y[rows], feats, self.min_leaf)
            if split is None:
                return node
            f, thr = split
            go_left = X[rows, f] <= thr
            feature[node], threshold[node] = f, thr
            left[node] = grow(rows[go_left], depth + 1)
            right[node] = grow(rows[~go_left], depth + 1)
            return node

        grow(np.arange(y.size), 0)
        self.tree_ = {
            "feature": np.array(feature, dtype=np.int64),
            "threshold": np.array(threshold, dtype=np.float64),
            "left": np.array(left, dtype=np.int64),
            "right": np.array(right, dtype=np.int64),
            "positives": np.array(positives, dtype=np.int64),
            "totals": np.array(totals, dtype=np.int64),
        }
        return self

    @property
    def node_count(self):
        return self.tree_["feature"].size

    def apply(self, X):
        """Leaf index reached by every row of ``X``."""
        check_is_fitted(self, "tree_")
        X = check_array(X, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise UsageError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        t = self.tree_
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = t["feature"][node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            f = t["feature"][cur]
            go_left = X[rows, f] <= t["threshold"][cur]
            node[rows] = np.where(go_left, t["left"][cur], t["right"][cur])
            active = t["feature"][node] >= 0
        return node

    def predict_success(self, X) -> np.ndarray:
        leaf = self.apply(X)
        t = self.tree_
        return (t["positives"][leaf] + 1.0) / (t["totals"][leaf] + 2.0)

    def predict_proba(self, X):
        p = self.predict_success(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_success(X) >= 0.5).astype(np.int64)

    def to_dict(self) -> dict:
        return {key: arr.tolist() for key, arr in self.tree_.items()}

    @classmethod
    def from_dict(cls, data, n_features, **params):
        est = cls(**params)
        est.tree_ = {
            key: np.asarray(data[key], dtype=np.float64 if key == "threshold" else np.int64)
            for key in ("feature", "threshold", "left", "right", "positives", "totals")
        }
        est.n_features_in_ = n_features
        est.classes_ = np.array([0, 1])
        return est


class RandomForestArm(ClassifierMixin, BaseEstimator):
    """Bootstrap ensemble of :class:`GiniTree`; predictions average leaf probabilities."""

    def __init__(self, n_trees=25, max_depth=4, min_leaf=1, max_features=None,
                 random_state=None):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.random_state = random_state

    def fit(self, X, y):
        if self.n_trees < 1:
            raise ConfigurationError(f"n_trees must be >= 1, got {self.n_trees}")
        X = check_array(X)
        y = np.asarray(y, dtype=np.int64).ravel()
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        rng = np.random.default_rng(self.random_state)
        self.estimators_ = []
        for _ in range(self.n_trees):
            rows = rng.integers(0, y.size, size=y.size)
            tree = GiniTree(self.max_depth, self.min_leaf, self.max_features,
                            random_state=int(rng.integers(MAX_SEED)))
            self.estimators_.append(tree.fit(X[rows], y[rows]))
        return self

    def predict_success(self, X) -> np.ndarray:
        check_is_fitted(self, "estimators_")
        return np.mean([t.predict_success(X) for t in self.estimators_], axis=0)

    def predict_proba(self, X):
        p = self.predict_success(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_success(X) >= 0.5).astype(np.int64)

    def gradient(self, weights, X, y):
        raise UnsupportedOperationError("random forests have no parameter gradient")

    def to_dict(self) -> dict:
        return {"kind": "forest", "trees": [t.to_dict() for t in self.estimators_]}

    @classmethod
    def from_dict(cls, data, n_features, **params):
        est = cls(**params)
        tree_params = {k: params[k] for k in ("max_depth", "min_leaf", "max_features") if k in params}
        est.estimators_ = [GiniTree.from_dict(t, n_features, **tree_params) for t in data["trees"]]
        est.n_features_in_ = n_features
        est.classes_ = np.array([0, 1])
        return est
