"""Training and autoregressive prediction for the LSTM citation forecaster.

The network reads one feature vector per year. Its readout at year offset
``s`` is a distribution over the count bin of the cumulative total at
``s + 1``. Training reads the true features for every year (teacher
forcing) and scores only the steps that forecast the horizon years.
Prediction reads the observed window, then feeds its own point forecasts
back in as the next year's features.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import nn
from ..data import DEFAULT_FEATURES, Cohort, FeatureConfig, featurize_counts, split
from ..errors import ConfigError, ShapeError, TrainingError, UsageError
from .base import Prediction, enforce_monotone, last_observed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-2
    hidden_dim: int = 32
    num_bins: int = 64
    bin_low: float = 1.0
    bin_high: float = 1e5
    features: tuple = DEFAULT_FEATURES
    patience: int = 20
    clip_norm: float = 5.0
    forget_bias: float = 1.0
    fractions: tuple = (0.7, 0.1, 0.2)

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("a seed (integer) is required")
        for name in ("epochs", "batch_size", "hidden_dim", "patience"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ConfigError("learning_rate and clip_norm must be positive")
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "fractions", tuple(self.fractions))

    def to_dict(self):
        d = asdict(self)
        d["features"] = list(self.features)
        d["fractions"] = list(self.fractions)
        return d


@dataclass
class LTCCPModel:
    params: nn.StackedModelParams
    features: FeatureConfig
    horizon: int

    @property
    def bin_edges(self):
        return self.params.bin_edges

    def predict(self, examples, horizon=None):
        """Point forecasts, shape ``(len(examples), horizon)``."""
        return predict_batch(self, examples, self.horizon if horizon is None else horizon)[0]

    def predict_one(self, example, horizon=None):
        H = self.horizon if horizon is None else horizon
        point, dist = predict_batch(self, [example], H)
        return Prediction(example.paper_id, point[0], dist[0])


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss, val_mape
    best_epoch: int = 0
    stopped_early: bool = False


def training_arrays(examples, edges):
    """Stack examples into ``(T, B, K)`` inputs plus bin targets and the loss mask."""
    W = examples[0].inputs.shape[0] - 1
    H = len(examples[0].targets)
    seq = np.stack([np.concatenate([ex.inputs, ex.future_inputs[:-1]]) for ex in examples], axis=1)
    targets = np.zeros(seq.shape[:2], dtype=np.intp)
    counts = np.stack([ex.targets for ex in examples], axis=1)  # (H, B)
    targets[W:] = nn.count_to_bin(counts, edges)
    mask = np.zeros(seq.shape[:2], dtype=bool)
    mask[W:W + H] = True
    return seq, targets, mask


def _rollout_features(new, cum, offset, features):
    return featurize_counts(new, cum, offset, features)


def predict_batch(model, examples, horizon):
    """Autoregressive forecasts for ``examples``.

    Returns ``(point, dist)`` with ``point`` of shape ``(B, horizon)`` and
    ``dist`` of shape ``(B, horizon, num_bins)``.
    """
    B = len(examples)
    nb = model.params.num_bins
    if horizon <= 0 or B == 0:
        return np.zeros((B, max(horizon, 0))), np.zeros((B, max(horizon, 0), nb))
    inputs = np.stack([ex.inputs for ex in examples], axis=1)  # (W+1, B, K)
    if inputs.shape[2] != model.params.input_dim:
        raise ShapeError(f"examples have {inputs.shape[2]} features, model expects "
                         f"{model.params.input_dim}")
    W = inputs.shape[0] - 1
    if W != model.features.train_years:
        raise ShapeError(f"examples observe {W + 1} years, model was trained on "
                         f"{model.features.train_years + 1}")
    reps = nn.bin_representatives(model.params.bin_edges)
    states = [nn.LSTMState.zeros(layer.hidden_dim, B) for layer in model.params.layers]

    def step(x):
        h = x
        for i, layer in enumerate(model.params.layers):
            states[i], _ = nn.lstm_cell_forward(layer, h, states[i])
            h = states[i].h
        return nn.softmax(nn._readout_logits(model.params, h))

    for t in range(W + 1):
        probs = step(inputs[t])
    prev = last_observed(examples)
    point = np.zeros((B, horizon))
    dist = np.zeros((B, horizon, nb))
    for k in range(horizon):
        dist[:, k] = probs
        est = np.maximum(probs @ reps, prev)
        point[:, k] = est
        if k + 1 < horizon:
            x = _rollout_features(est - prev, est, W + 1 + k, model.features)
            probs = step(x)
        prev = est
    return enforce_monotone(point, last_observed(examples)), dist


def _mape(pred, truth):
    return float(np.mean(np.abs(pred - truth) / truth))


def train_ltccp(data, config, splits=None):
    """Fit the two-layer LSTM; returns ``(LTCCPModel, TrainLog)``.

    ``data`` is a Cohort (split internally with ``config.fractions`` and
    ``config.seed``) or, with ``splits`` given, ignored in favour of the
    provided ``{"train": [...], "validation": [...]}`` example lists.
    """
    if splits is None:
        if not isinstance(data, Cohort) or data.M == 0:
            raise UsageError("train_ltccp needs a nonempty cohort")
        if tuple(config.features) != data.features.names:
            raise ShapeError(f"config features {config.features} differ from cohort features "
                             f"{data.features.names}")
        splits = split(data, config.fractions, config.seed)
    train = splits["train"]
    val = splits.get("validation") or []
    if not train:
        raise UsageError("training split is empty")
    features = FeatureConfig(config.features, train[0].inputs.shape[0] - 1)
    if train[0].inputs.shape[1] != features.K:
        raise ShapeError(f"examples have {train[0].inputs.shape[1]} features, config lists "
                         f"{features.K}")
    horizon = len(train[0].targets)

    edges = nn.log_bin_edges(config.num_bins, config.bin_low, config.bin_high)
    params = nn.init_model(features.K, config.hidden_dim, edges, seed=config.seed,
                           forget_bias=config.forget_bias, features=features.names)
    hyper = nn.AdamHyper(lr=config.learning_rate, clip_norm=config.clip_norm)
    opt = nn.AdamState()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])

    seq, targets, mask = training_arrays(train, edges)
    if val:
        vseq, vtargets, vmask = training_arrays(val, edges)
        vtruth = np.stack([ex.targets for ex in val])

    def evaluate(p):
        model = LTCCPModel(p, features, horizon)
        row = {"train_loss": nn.sequence_loss(p, seq, targets, mask)}
        if val:
            row["val_loss"] = nn.sequence_loss(p, vseq, vtargets, vmask)
            row["val_mape"] = _mape(model.predict(val), vtruth)
        return row

    trace = TrainLog()
    first = evaluate(params)
    trace.epochs.append({"epoch": 0, **first})
    best_params, best_score, since_best = params, first.get("val_mape", first["train_loss"]), 0
    n = len(train)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            cache, _ = nn.stacked_forward(params, seq[:, idx])
            grads = nn.backward(params, cache, targets[:, idx], mask[:, idx])
            try:
                params, opt = nn.optimizer_step(params, grads, opt, hyper)
            except TrainingError as e:
                raise TrainingError(f"epoch {epoch}: {e}") from None
        row = evaluate(params)
        if not np.isfinite(row["train_loss"]):
            raise TrainingError(f"non-finite training loss at epoch {epoch} "
                                f"(optimizer step {opt.step})")
        trace.epochs.append({"epoch": epoch, **row})
        score = row.get("val_mape", row["train_loss"])
        if score < best_score:
            best_params, best_score, since_best = params, score, 0
            trace.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= config.patience:
                trace.stopped_early = True
                log.info("early stop at epoch %d (best %d)", epoch, trace.best_epoch)
                break
    return LTCCPModel(best_params, features, horizon), trace


def predict(model, example, horizon=None):
    """Forecast one paper; ``horizon=0`` gives an empty prediction."""
    return model.predict_one(example, horizon)
