"""Pieces shared by every predictor."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import Cohort, FeatureConfig, make_example
from ..errors import ShapeError


@dataclass
class Prediction:
    paper_id: str
    predicted: np.ndarray  # cumulative counts for t = 1..H
    distributions: np.ndarray | None = field(default=None, repr=False)

    @property
    def offsets(self):
        return np.arange(1, len(self.predicted) + 1)


def enforce_monotone(predicted, last_observed):
    """Clamp so each row never drops below its previous value or the last observed count."""
    out = np.array(predicted, dtype=np.float64, copy=True)
    floor = np.asarray(last_observed, dtype=np.float64)
    single = out.ndim == 1
    if single:
        out = out[None, :]
        floor = np.atleast_1d(floor)
    for t in range(out.shape[1]):
        floor = np.maximum(out[:, t], floor)
        out[:, t] = floor
    return out[0] if single else out


def flatten_inputs(examples):
    """Observed-window features of each example, concatenated year by year."""
    return np.stack([ex.inputs.reshape(-1) for ex in examples])


def stack_targets(examples):
    return np.stack([ex.targets for ex in examples])


def last_observed(examples):
    return np.array([ex.observed[-1] for ex in examples])


def as_examples(data):
    if isinstance(data, Cohort):
        return [make_example(s, data.train_years, data.horizon, data.features)
                for s in data.sequences]
    return list(data)


def resolve_features(data, examples, features):
    if isinstance(data, Cohort):
        features = data.features
    elif features is None:
        features = FeatureConfig(train_years=examples[0].inputs.shape[0] - 1)
    window, K = examples[0].inputs.shape
    if features.K != K or features.train_years != window - 1:
        raise ShapeError(f"examples carry {window} years x {K} features, feature config "
                         f"says {features.train_years + 1} x {features.K}")
    return features
