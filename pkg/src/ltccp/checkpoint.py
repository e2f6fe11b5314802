"""JSON checkpoints for the LSTM model.

Tensors are stored row-major as plain JSON numbers. ``json`` writes floats
with ``repr``, which round-trips float64 exactly, so save -> load gives
back bit-identical parameters.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import nn
from .data import FeatureConfig
from .errors import MissingInputError, SchemaError

FORMAT = "ltccp-checkpoint"
FORMAT_VERSION = 1


def params_to_document(params, meta=None):
    return {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "input_dim": params.input_dim,
        "hidden_dims": list(params.hidden_dims),
        "num_bins": params.num_bins,
        "readout": params.readout_W is not None,
        "features": list(params.features),
        "bin_edges": params.bin_edges.tolist(),
        "tensors": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                    for k, v in params.named_tensors().items()},
        "meta": meta or {},
    }


def params_from_document(doc):
    if doc.get("format") != FORMAT:
        raise SchemaError("not an ltccp checkpoint")
    if doc.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"unsupported checkpoint version {doc.get('format_version')}")
    try:
        tensors = {k: np.array(t["data"], dtype=np.float64).reshape(t["shape"])
                   for k, t in doc["tensors"].items()}
        layers = []
        for i in range(nn.NUM_LAYERS):
            kw = {}
            for g in nn.GATES:
                kw["W_" + g] = tensors[f"layer{i}.W_{g}"]
                kw["b_" + g] = tensors[f"layer{i}.b_{g}"]
            layers.append(nn.LSTMCellParams(**kw))
        params = nn.StackedModelParams(
            layers=layers,
            readout_W=tensors.get("readout_W") if doc["readout"] else None,
            readout_b=tensors.get("readout_b") if doc["readout"] else None,
            bin_edges=np.array(doc["bin_edges"], dtype=np.float64),
            features=tuple(doc.get("features", ())),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"malformed checkpoint: {e}") from None
    if params.input_dim != doc["input_dim"] or list(params.hidden_dims) != doc["hidden_dims"]:
        raise SchemaError("checkpoint dimensions disagree with its tensors")
    return params, doc.get("meta", {})


def save_params(params, path, meta=None):
    Path(path).write_text(json.dumps(params_to_document(params, meta)) + "\n")


def load_params(path):
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"no such checkpoint: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e.msg})") from None
    return params_from_document(doc)


def save_model(model, path):
    """Save an :class:`~ltccp.models.ltccp.LTCCPModel`."""
    meta = {"train_years": model.features.train_years, "horizon": model.horizon}
    save_params(model.params, path, meta)


def load_model(path):
    from .models.ltccp import LTCCPModel

    params, meta = load_params(path)
    if "train_years" not in meta or "horizon" not in meta:
        raise SchemaError(f"{path}: checkpoint lacks train_years/horizon metadata")
    features = FeatureConfig(params.features, meta["train_years"])
    return LTCCPModel(params, features, meta["horizon"])
