"""Per-horizon least-squares baseline on the flattened observed-window features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import FeatureConfig
from ..errors import SchemaError, ShapeError, UsageError
from .base import (Prediction, as_examples, enforce_monotone, flatten_inputs, last_observed,
                   resolve_features, stack_targets)

RIDGE = 1e-8


def solve_normal_equations(X, y, ridge=RIDGE):
    """``(X'X + ridge*I) b = X'y``; ``y`` may hold several target columns."""
    A = X.T @ X
    A[np.diag_indices_from(A)] += ridge
    return np.linalg.solve(A, X.T @ y)


@dataclass
class LinearBaseline:
    columns: np.ndarray  # indices of flattened features kept in the design
    coefs: np.ndarray  # (1 + len(columns), H); row 0 is the intercept
    features: FeatureConfig
    horizon: int

    def design(self, examples):
        X = flatten_inputs(examples)
        if X.shape[1] != (self.features.train_years + 1) * self.features.K:
            raise ShapeError(f"examples have {X.shape[1]} window features, model expects "
                             f"{(self.features.train_years + 1) * self.features.K}")
        return np.hstack([np.ones((len(X), 1)), X[:, self.columns]])

    def predict_raw(self, examples):
        return self.design(examples) @ self.coefs

    def predict(self, examples, horizon=None):
        H = self.horizon if horizon is None else horizon
        if H > self.horizon:
            raise UsageError(f"model was fit for {self.horizon} horizons, asked for {H}")
        raw = self.predict_raw(examples)[:, :H]
        return enforce_monotone(raw, last_observed(examples))

    def predict_one(self, example, horizon=None):
        return Prediction(example.paper_id, self.predict([example], horizon)[0])

    def to_json(self):
        return {"kind": "lr", "horizon": self.horizon, "ridge": RIDGE,
                "features": list(self.features.names), "train_years": self.features.train_years,
                "columns": self.columns.tolist(), "coefs": self.coefs.tolist()}

    @classmethod
    def from_json(cls, obj):
        if obj.get("kind") != "lr":
            raise SchemaError("not a linear-regression model file")
        return cls(np.array(obj["columns"], dtype=np.intp), np.array(obj["coefs"]),
                   FeatureConfig(tuple(obj["features"]), obj["train_years"]), obj["horizon"])


def train_lr(data, features=None, ridge=RIDGE):
    """One regression per horizon offset, all sharing a design matrix.

    ``data`` is a :class:`Cohort` or a list of examples. Columns that are
    constant over the training rows (the age feature, for one) duplicate
    the intercept, and exact copies of an earlier column (year-0 new and
    cumulative counts coincide) add nothing; both are dropped before solving.
    """
    examples = as_examples(data)
    if not examples:
        raise UsageError("cannot fit a regression to an empty training set")
    features = resolve_features(data, examples, features)
    X = flatten_inputs(examples)
    Y = stack_targets(examples)
    columns = np.flatnonzero(np.ptp(X, axis=0) > 0)
    _, first = np.unique(X[:, columns], axis=1, return_index=True)
    columns = columns[np.sort(first)]
    design = np.hstack([np.ones((len(X), 1)), X[:, columns]])
    coefs = solve_normal_equations(design, Y, ridge)
    return LinearBaseline(columns, coefs, features, Y.shape[1])


def predict_lr(model, examples, horizon=None):
    return model.predict(examples, horizon)
