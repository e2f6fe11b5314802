"""Regression trees grown by greedy variance reduction, one per horizon offset."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import FeatureConfig
from ..errors import SchemaError, ShapeError, UsageError
from .base import (Prediction, as_examples, enforce_monotone, flatten_inputs, last_observed,
                   resolve_features, stack_targets)

# Gains within this fraction of the node's sum of squares of the best gain
# count as ties; ties go to the lowest feature index, then lowest threshold.
TIE_RTOL = 1e-9


@dataclass
class Node:
    value: float
    n: int
    feature: int = -1
    threshold: float = 0.0
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self):
        return self.left is None

    def depth(self):
        return 0 if self.is_leaf else 1 + max(self.left.depth(), self.right.depth())

    def to_json(self):
        if self.is_leaf:
            return {"value": self.value, "n": self.n}
        return {"value": self.value, "n": self.n, "feature": self.feature,
                "threshold": self.threshold,
                "left": self.left.to_json(), "right": self.right.to_json()}

    @classmethod
    def from_json(cls, obj):
        if "feature" not in obj:
            return cls(obj["value"], obj["n"])
        return cls(obj["value"], obj["n"], obj["feature"], obj["threshold"],
                   cls.from_json(obj["left"]), cls.from_json(obj["right"]))


def candidate_splits(X, y, min_leaf):
    """All valid splits as arrays (gain, feature, threshold) in tie-break order.

    Left child takes ``x <= threshold``; thresholds are midpoints between
    consecutive distinct values.
    """
    n = len(y)
    total_sse = float(np.sum((y - y.mean()) ** 2))
    sizes = np.arange(1, n)
    gains, feats, thrs = [], [], []
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        left_sse = csq[:-1] - csum[:-1] ** 2 / sizes
        right_sse = (csq[-1] - csq[:-1]) - (csum[-1] - csum[:-1]) ** 2 / (n - sizes)
        valid = (xs[:-1] < xs[1:]) & (sizes >= min_leaf) & (n - sizes >= min_leaf)
        idx = np.flatnonzero(valid)
        gains.append(total_sse - left_sse[idx] - right_sse[idx])
        feats.append(np.full(len(idx), j))
        thrs.append((xs[idx] + xs[idx + 1]) / 2.0)
    return np.concatenate(gains), np.concatenate(feats), np.concatenate(thrs), total_sse


def best_split(X, y, min_leaf):
    """(gain, feature, threshold) of the split to make, or None."""
    gains, feats, thrs, total_sse = candidate_splits(X, y, min_leaf)
    if len(gains) == 0:
        return None
    tol = TIE_RTOL * total_sse
    top = gains.max()
    if top <= tol:
        return None
    i = int(np.flatnonzero(gains >= top - tol)[0])
    return float(gains[i]), int(feats[i]), float(thrs[i])


def grow(X, y, max_depth, min_leaf, depth=0):
    node = Node(float(y.mean()), len(y))
    if depth >= max_depth or len(y) < 2 * min_leaf:
        return node
    split = best_split(X, y, min_leaf)
    if split is None:
        return node
    _, j, thr = split
    go_left = X[:, j] <= thr
    node.feature, node.threshold = j, thr
    node.left = grow(X[go_left], y[go_left], max_depth, min_leaf, depth + 1)
    node.right = grow(X[~go_left], y[~go_left], max_depth, min_leaf, depth + 1)
    return node


def tree_predict(node, X):
    out = np.empty(len(X))
    for i, row in enumerate(X):
        cur = node
        while not cur.is_leaf:
            cur = cur.left if row[cur.feature] <= cur.threshold else cur.right
        out[i] = cur.value
    return out


@dataclass
class TreeBaseline:
    trees: list  # one root Node per horizon offset
    features: FeatureConfig
    max_depth: int
    min_leaf: int

    @property
    def horizon(self):
        return len(self.trees)

    def _X(self, examples):
        X = flatten_inputs(examples)
        if X.shape[1] != (self.features.train_years + 1) * self.features.K:
            raise ShapeError(f"examples have {X.shape[1]} window features, trees expect "
                             f"{(self.features.train_years + 1) * self.features.K}")
        return X

    def predict(self, examples, horizon=None):
        H = self.horizon if horizon is None else horizon
        if H > self.horizon:
            raise UsageError(f"{self.horizon} trees available, asked for {H} horizons")
        X = self._X(examples)
        raw = np.column_stack([tree_predict(tree, X) for tree in self.trees[:H]]) if H else \
            np.zeros((len(X), 0))
        return enforce_monotone(raw, last_observed(examples))

    def predict_one(self, example, horizon=None):
        return Prediction(example.paper_id, self.predict([example], horizon)[0])

    def to_json(self):
        return {"kind": "cart", "max_depth": self.max_depth, "min_leaf": self.min_leaf,
                "features": list(self.features.names), "train_years": self.features.train_years,
                "trees": [t.to_json() for t in self.trees]}

    @classmethod
    def from_json(cls, obj):
        if obj.get("kind") != "cart":
            raise SchemaError("not a regression-tree model file")
        return cls([Node.from_json(t) for t in obj["trees"]],
                   FeatureConfig(tuple(obj["features"]), obj["train_years"]),
                   obj["max_depth"], obj["min_leaf"])


def train_cart(data, max_depth=6, min_leaf=5, features=None):
    examples = as_examples(data)
    if min_leaf < 1 or max_depth < 0:
        raise UsageError("min_leaf must be >= 1 and max_depth >= 0")
    if min_leaf > len(examples):
        raise UsageError(f"min_leaf {min_leaf} exceeds training set size {len(examples)}")
    features = resolve_features(data, examples, features)
    X = flatten_inputs(examples)
    Y = stack_targets(examples)
    trees = [grow(X, Y[:, h], max_depth, min_leaf) for h in range(Y.shape[1])]
    return TreeBaseline(trees, features, max_depth, min_leaf)


def predict_cart(model, examples, horizon=None):
    return model.predict(examples, horizon)
