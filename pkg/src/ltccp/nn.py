"""Two-layer LSTM sequence model with a softmax readout over count bins.

Everything here is plain float64 numpy. Arrays carry an optional leading
batch axis: a single sequence is ``(T, K)``, a batch is ``(T, B, K)``. The
gradient code is hand-written backpropagation through time for this one
fixed topology.

Per layer and step, with ``z = [h_prev, x]``::

    forget  = sigmoid(W_f z + b_f)
    update  = sigmoid(W_u z + b_u)
    cand    = tanh(W_c z + b_c)
    c       = forget * c_prev + update * cand
    read    = sigmoid(W_r z + b_r)
    h       = read * tanh(c)

and the top layer's ``h`` goes through ``softmax(readout_W h + readout_b)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError, UsageError

GATES = ("f", "u", "c", "r")
NUM_LAYERS = 2

GradientSet = dict  # parameter name -> ndarray, same keys/shapes as StackedModelParams.named_tensors()


def sigmoid(x):
    """Logistic function, evaluated without overflow for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits, axis=-1):
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    m = np.max(logits, axis=axis, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# count bins
# ---------------------------------------------------------------------------

def log_bin_edges(num_bins=64, low=1.0, high=1e5):
    """Edges for ``num_bins`` bins: ``[0, low)``, log-spaced bins up to ``high``, ``[high, inf)``."""
    if num_bins < 3:
        raise UsageError("num_bins must be at least 3")
    if not 0 < low < high:
        raise UsageError("bin range must satisfy 0 < low < high")
    return np.geomspace(low, high, num_bins - 1)


def bin_representatives(edges):
    """Point value standing in for each bin.

    Interior bins use the geometric mean of their edges, the open top bin
    uses 1.5x its lower edge, and the bottom bin (counts below the first
    edge, i.e. zero citations) uses 0.
    """
    edges = np.asarray(edges, dtype=np.float64)
    reps = np.empty(len(edges) + 1)
    reps[0] = 0.0
    reps[1:-1] = np.sqrt(edges[:-1] * edges[1:])
    reps[-1] = 1.5 * edges[-1]
    return reps


def count_to_bin(counts, edges):
    return np.searchsorted(edges, np.asarray(counts, dtype=np.float64), side="right")


def expected_count(probs, edges):
    """Probability-weighted bin representative along the last axis."""
    return probs @ bin_representatives(edges)


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass
class LSTMCellParams:
    W_f: np.ndarray
    W_u: np.ndarray
    W_c: np.ndarray
    W_r: np.ndarray
    b_f: np.ndarray
    b_u: np.ndarray
    b_c: np.ndarray
    b_r: np.ndarray

    def __post_init__(self):
        shape = self.W_f.shape
        if len(shape) != 2 or shape[1] <= shape[0]:
            raise ShapeError(f"W_f must be (hidden, hidden + input), got {shape}")
        for g in GATES:
            W = getattr(self, "W_" + g)
            b = getattr(self, "b_" + g)
            if W.shape != shape:
                raise ShapeError(f"W_{g} has shape {W.shape}, expected {shape}")
            if b.shape != (shape[0],):
                raise ShapeError(f"b_{g} has shape {b.shape}, expected {(shape[0],)}")

    @property
    def hidden_dim(self):
        return self.W_f.shape[0]

    @property
    def input_dim(self):
        return self.W_f.shape[1] - self.W_f.shape[0]

    @classmethod
    def zeros(cls, input_dim, hidden_dim):
        kw = {}
        for g in GATES:
            kw["W_" + g] = np.zeros((hidden_dim, hidden_dim + input_dim))
            kw["b_" + g] = np.zeros(hidden_dim)
        return cls(**kw)


@dataclass
class LSTMState:
    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise ShapeError(f"h {self.h.shape} and c {self.c.shape} differ in shape")

    @classmethod
    def zeros(cls, hidden_dim, batch=None):
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class StackedModelParams:
    """Two LSTM layers plus an affine softmax readout over count bins.

    ``readout_W`` may be ``None`` only when the top hidden size equals the
    number of bins; the top hidden state is then used as the logits as-is.
    """

    layers: list
    readout_W: np.ndarray | None
    readout_b: np.ndarray | None
    bin_edges: np.ndarray
    features: tuple = ()

    def __post_init__(self):
        if len(self.layers) != NUM_LAYERS:
            raise ShapeError(f"expected {NUM_LAYERS} layers, got {len(self.layers)}")
        lower, upper = self.layers
        if upper.input_dim != lower.hidden_dim:
            raise ShapeError(
                f"layer 2 input_dim {upper.input_dim} != layer 1 hidden_dim {lower.hidden_dim}")
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise ShapeError("bin_edges must be a strictly increasing vector")
        self.bin_edges = edges
        if self.readout_W is None:
            if upper.hidden_dim != self.num_bins:
                raise ShapeError("readout can only be omitted when hidden_dim == num_bins")
            self.readout_b = None
        else:
            if self.readout_W.shape != (self.num_bins, upper.hidden_dim):
                raise ShapeError(
                    f"readout_W has shape {self.readout_W.shape}, "
                    f"expected {(self.num_bins, upper.hidden_dim)}")
            if self.readout_b is None or self.readout_b.shape != (self.num_bins,):
                raise ShapeError(f"readout_b must have shape {(self.num_bins,)}")
        if self.features and len(self.features) != self.input_dim:
            raise ShapeError(
                f"{len(self.features)} feature names for input_dim {self.input_dim}")
        self.features = tuple(self.features)

    @property
    def num_bins(self):
        return len(self.bin_edges) + 1

    @property
    def input_dim(self):
        return self.layers[0].input_dim

    @property
    def hidden_dims(self):
        return tuple(layer.hidden_dim for layer in self.layers)

    def named_tensors(self):
        """Parameter tensors in a fixed order, keyed ``layer{i}.W_f`` etc."""
        out = {}
        for i, layer in enumerate(self.layers):
            for g in GATES:
                out[f"layer{i}.W_{g}"] = layer.__dict__["W_" + g]
            for g in GATES:
                out[f"layer{i}.b_{g}"] = layer.__dict__["b_" + g]
        if self.readout_W is not None:
            out["readout_W"] = self.readout_W
            out["readout_b"] = self.readout_b
        return out

    def replace_tensors(self, tensors):
        """New model with tensors taken from ``tensors`` (missing keys keep current values)."""
        layers = []
        for i, layer in enumerate(self.layers):
            kw = {f.name: tensors.get(f"layer{i}.{f.name}", getattr(layer, f.name))
                  for f in dataclasses.fields(LSTMCellParams)}
            layers.append(LSTMCellParams(**kw))
        return StackedModelParams(
            layers=layers,
            readout_W=tensors.get("readout_W", self.readout_W),
            readout_b=tensors.get("readout_b", self.readout_b),
            bin_edges=self.bin_edges,
            features=self.features,
        )

    def copy(self):
        return self.replace_tensors({k: v.copy() for k, v in self.named_tensors().items()})

    @property
    def num_parameters(self):
        return sum(t.size for t in self.named_tensors().values())


def init_model(input_dim, hidden_dim=32, bin_edges=None, seed=0, forget_bias=1.0,
               features=(), readout=True):
    """Weights uniform in +-1/sqrt(fan_in); biases zero except the forget gate."""
    rng = np.random.default_rng(seed)
    if bin_edges is None:
        bin_edges = log_bin_edges()
    hidden = hidden_dim if np.ndim(hidden_dim) else (hidden_dim, hidden_dim)
    layers = []
    in_dim = input_dim
    for h in hidden:
        fan_in = h + in_dim
        bound = 1.0 / np.sqrt(fan_in)
        kw = {}
        for g in GATES:
            kw["W_" + g] = rng.uniform(-bound, bound, size=(h, fan_in))
        for g in GATES:
            kw["b_" + g] = np.full(h, forget_bias) if g == "f" else np.zeros(h)
        layers.append(LSTMCellParams(**kw))
        in_dim = h
    num_bins = len(bin_edges) + 1
    if readout:
        bound = 1.0 / np.sqrt(in_dim)
        readout_W = rng.uniform(-bound, bound, size=(num_bins, in_dim))
        readout_b = np.zeros(num_bins)
    else:
        readout_W = readout_b = None
    return StackedModelParams(layers, readout_W, readout_b, np.asarray(bin_edges), features)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

@dataclass
class CellCache:
    """Intermediates of one cell step; every array is ``(B, ·)``."""

    z: np.ndarray
    c_prev: np.ndarray
    f: np.ndarray
    u: np.ndarray
    cand: np.ndarray
    r: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


@dataclass
class ForwardCache:
    steps: list = field(default_factory=list)  # steps[t][layer] -> CellCache
    logits: np.ndarray | None = None  # (T, B, num_bins)
    probs: np.ndarray | None = None
    hidden_dims: tuple = ()
    batched: bool = True


def _as_batch(a):
    a = np.asarray(a, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def lstm_cell_forward(params, x, prev):
    """One step of one LSTM layer; returns the next state and its cache.

    ``x`` is ``(K,)`` or ``(B, K)``; ``prev`` holds matching ``h`` and ``c``.
    """
    single = np.ndim(x) == 1
    x = _as_batch(x)
    h_prev = _as_batch(prev.h)
    c_prev = _as_batch(prev.c)
    H = params.hidden_dim
    if x.shape[1] != params.input_dim:
        raise ShapeError(f"x has dimension {x.shape[1]}, layer expects {params.input_dim}")
    if h_prev.shape[1] != H or c_prev.shape[1] != H:
        raise ShapeError(f"prev state has dimension {h_prev.shape[1]}, layer expects {H}")
    if h_prev.shape[0] != x.shape[0]:
        raise ShapeError(f"prev state batch {h_prev.shape[0]} != x batch {x.shape[0]}")
    z = np.concatenate([h_prev, x], axis=1)
    f = sigmoid(z @ params.W_f.T + params.b_f)
    u = sigmoid(z @ params.W_u.T + params.b_u)
    cand = np.tanh(z @ params.W_c.T + params.b_c)
    r = sigmoid(z @ params.W_r.T + params.b_r)
    c = f * c_prev + u * cand
    tanh_c = np.tanh(c)
    h = r * tanh_c
    cache = CellCache(z, c_prev, f, u, cand, r, c, tanh_c, h)
    if single:
        return LSTMState(h[0], c[0]), cache
    return LSTMState(h, c), cache


def _readout_logits(model, h):
    if model.readout_W is None:
        return h.copy()
    return h @ model.readout_W.T + model.readout_b


def stacked_forward(model, seq):
    """Run both layers over ``seq`` from zero initial state.

    Returns ``(cache, probs)`` with ``probs`` shaped like ``seq`` but with the
    feature axis replaced by the bin axis.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim not in (2, 3) or seq.shape[0] == 0:
        raise UsageError("seq must be a nonempty (T, K) or (T, B, K) array")
    batched = seq.ndim == 3
    if not batched:
        seq = seq[:, None, :]
    T, B, K = seq.shape
    if K != model.input_dim:
        raise ShapeError(f"features have dimension {K}, model expects {model.input_dim}")
    states = [LSTMState.zeros(layer.hidden_dim, B) for layer in model.layers]
    cache = ForwardCache(hidden_dims=model.hidden_dims, batched=batched)
    tops = []
    for t in range(T):
        inp = seq[t]
        step = []
        for i, layer in enumerate(model.layers):
            states[i], cc = lstm_cell_forward(layer, inp, states[i])
            step.append(cc)
            inp = states[i].h
        cache.steps.append(step)
        tops.append(inp)
    cache.logits = _readout_logits(model, np.stack(tops))
    cache.probs = softmax(cache.logits)
    probs = cache.probs if batched else cache.probs[:, 0, :]
    return cache, probs


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------

def _check_targets(targets, mask, shape):
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if targets.shape != shape or mask.shape != shape:
        raise ShapeError(f"targets {targets.shape} / mask {mask.shape} do not match {shape}")
    if not mask.any():
        raise UsageError("mask selects no supervised steps")
    return targets.astype(np.intp), mask


def loss(probs, targets, mask):
    """Mean negative log-likelihood of the target bins over masked steps."""
    probs = np.asarray(probs, dtype=np.float64)
    targets, mask = _check_targets(targets, mask, probs.shape[:-1])
    if np.any((targets < 0) | (targets >= probs.shape[-1])):
        raise UsageError("target bin index out of range")
    picked = np.take_along_axis(probs, targets[..., None], axis=-1)[..., 0]
    with np.errstate(divide="ignore"):
        return float(-np.log(picked[mask]).mean())


def loss_from_logits(logits, targets, mask):
    """Same quantity as :func:`loss`, via log-sum-exp on the raw logits."""
    targets, mask = _check_targets(targets, mask, logits.shape[:-1])
    logp = log_softmax(logits)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    return float(-picked[mask].mean())


def sequence_loss(model, seq, targets, mask):
    cache, _ = stacked_forward(model, seq)
    logits = cache.logits if cache.batched else cache.logits[:, 0, :]
    return loss_from_logits(logits, targets, mask)


def _cell_backward(params, cc, dh, dc):
    """Backprop one cell step. Returns (param grads, dh_prev, dc_prev, dx)."""
    do_tanh = dh * cc.tanh_c
    dc = dc + dh * cc.r * (1.0 - cc.tanh_c ** 2)
    pre = {
        "f": dc * cc.c_prev * cc.f * (1.0 - cc.f),
        "u": dc * cc.cand * cc.u * (1.0 - cc.u),
        "c": dc * cc.u * (1.0 - cc.cand ** 2),
        "r": do_tanh * cc.r * (1.0 - cc.r),
    }
    grads = {}
    dz = np.zeros_like(cc.z)
    for g in GATES:
        W = getattr(params, "W_" + g)
        grads["W_" + g] = pre[g].T @ cc.z
        grads["b_" + g] = pre[g].sum(axis=0)
        dz += pre[g] @ W
    H = params.hidden_dim
    return grads, dz[:, :H], dc * cc.f, dz[:, H:]


def backward(model, cache, targets, mask):
    """Exact gradient of :func:`loss` w.r.t. every parameter, by BPTT."""
    if cache.hidden_dims != model.hidden_dims or cache.logits.shape[-1] != model.num_bins:
        raise ShapeError("forward cache was not produced by this model")
    logits = cache.logits
    if not cache.batched:
        targets = np.asarray(targets)[:, None]
        mask = np.asarray(mask)[:, None]
    targets, mask = _check_targets(targets, mask, logits.shape[:-1])
    T, B, nb = logits.shape

    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    dlogits = (cache.probs - onehot) * (mask[..., None] / mask.sum())

    grads = {k: np.zeros_like(v) for k, v in model.named_tensors().items()}
    tops = np.stack([step[-1].h for step in cache.steps])
    if model.readout_W is not None:
        grads["readout_W"] = np.einsum("tbk,tbh->kh", dlogits, tops)
        grads["readout_b"] = dlogits.sum(axis=(0, 1))
        dh_out = dlogits @ model.readout_W
    else:
        dh_out = dlogits

    for i in reversed(range(NUM_LAYERS)):
        layer = model.layers[i]
        H = layer.hidden_dim
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        dx = np.zeros((T, B, layer.input_dim))
        for t in reversed(range(T)):
            g, dh_next, dc_next, dx[t] = _cell_backward(
                layer, cache.steps[t][i], dh_out[t] + dh_next, dc_next)
            for k, v in g.items():
                grads[f"layer{i}.{k}"] += v
        dh_out = dx
    return grads


def grad_norm(grads):
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(model, grads, state, hyper=AdamHyper()):
    """One Adam update with global-norm clipping. Inputs are left untouched."""
    params = model.named_tensors()
    if grads.keys() != params.keys():
        raise ShapeError("gradient set does not match model parameters")
    step = state.step + 1
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ShapeError(f"gradient {k} has shape {g.shape}, expected {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {k} at optimizer step {step}")
    scale = 1.0
    if hyper.clip_norm is not None:
        norm = grad_norm(grads)
        if norm > hyper.clip_norm:
            scale = hyper.clip_norm / norm

    m_new, v_new, updated = {}, {}, {}
    b1c = 1.0 - hyper.beta1 ** step
    b2c = 1.0 - hyper.beta2 ** step
    for k, p in params.items():
        g = grads[k] * scale
        m = hyper.beta1 * state.m.get(k, 0.0) + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * state.v.get(k, 0.0) + (1.0 - hyper.beta2) * g * g
        updated[k] = p - hyper.lr * (m / b1c) / (np.sqrt(v / b2c) + hyper.eps)
        m_new[k], v_new[k] = m, v
    return model.replace_tensors(updated), AdamState(step, m_new, v_new)


# ---------------------------------------------------------------------------
# verification harness
# ---------------------------------------------------------------------------

def numeric_gradient(model, seq, targets, mask, fd_step=1e-5):
    """Central finite differences of :func:`sequence_loss` for every parameter."""
    tensors = {k: v.copy() for k, v in model.named_tensors().items()}
    probe = model.replace_tensors(tensors)  # shares the arrays edited below
    out = {}
    for name, arr in tensors.items():
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + fd_step
            up = sequence_loss(probe, seq, targets, mask)
            flat[j] = orig - fd_step
            down = sequence_loss(probe, seq, targets, mask)
            flat[j] = orig
            num.reshape(-1)[j] = (up - down) / (2.0 * fd_step)
        out[name] = num
    return out


def grad_check(model, seq, targets, mask, fd_step=1e-5, grads=None):
    """Largest relative disagreement between analytic and numeric gradients.

    ``grads`` defaults to the output of :func:`backward`; pass a doctored set
    to check that the harness notices.
    """
    if grads is None:
        cache, _ = stacked_forward(model, seq)
        grads = backward(model, cache, targets, mask)
    numeric = numeric_gradient(model, seq, targets, mask, fd_step)
    worst = 0.0
    for k, num in numeric.items():
        ana = grads[k]
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-8)
        worst = max(worst, float(np.max(np.abs(ana - num) / denom)))
    return worst
