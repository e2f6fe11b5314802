"""Relative-error metrics, per-horizon comparison tables and distribution exports."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, MetricError, MismatchError, SchemaError

DEFAULT_EPSILON = 0.3

# Full-scale results reported for the AMiner cohort (143,902 papers), kept
# for reference in reports. Each entry is horizon t -> (MAPE, ACC).
REFERENCE_TABLE = {
    "RPP": {1: (0.219, 0.819), 2: (0.381, 0.661), 3: (0.686, 0.524), 4: (0.904, 0.433), 5: (1.376, 0.370)},
    "SVR": {1: (0.195, 0.814), 2: (0.252, 0.664), 3: (0.296, 0.579), 4: (0.331, 0.528), 5: (0.362, 0.493)},
    "LR": {1: (0.136, 0.924), 2: (0.207, 0.752), 3: (0.269, 0.629), 4: (0.330, 0.540), 5: (0.386, 0.482)},
    "CART": {1: (0.131, 0.913), 2: (0.202, 0.758), 3: (0.256, 0.634), 4: (0.297, 0.549), 5: (0.328, 0.489)},
    "LT-CCP": {1: (0.123, 0.940), 2: (0.185, 0.804), 3: (0.234, 0.703), 4: (0.298, 0.590), 5: (0.317, 0.551)},
}
TABLE_ORDER = ("RPP", "SVR", "LR", "CART", "LT-CCP")
ABSENT_MODELS = ("RPP", "SVR")


def _relative_errors(pairs, ids=None):
    arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    pred, true = arr[:, 0], arr[:, 1]
    bad = np.flatnonzero(true <= 0)
    if bad.size:
        who = ids[bad[0]] if ids is not None else f"pair #{bad[0]}"
        raise MetricError(f"observed count {true[bad[0]]:g} for {who}; relative error undefined")
    if len(arr) == 0:
        raise MetricError("no (prediction, observation) pairs")
    return np.abs((pred - true) / true)


def mape(pairs, ids=None):
    """Mean of |(predicted - observed) / observed| over ``(predicted, observed)`` pairs."""
    return float(np.mean(_relative_errors(pairs, ids)))


def acc(pairs, epsilon=DEFAULT_EPSILON, ids=None):
    """Fraction of pairs whose relative error is at most ``epsilon`` (inclusive)."""
    return float(np.mean(_relative_errors(pairs, ids) <= epsilon))


ROUNDING = {None: lambda x: x, "none": lambda x: x, "round": np.rint, "floor": np.floor,
            "ceil": np.ceil}


@dataclass(frozen=True)
class EvalConfig:
    epsilon: float = DEFAULT_EPSILON
    horizons: tuple = (1, 2, 3, 4, 5)
    rounding: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        hs = self.horizons
        if not hs or any(h <= 0 for h in hs) or list(hs) != sorted(set(hs)):
            raise ConfigError("horizons must be positive, distinct and sorted")
        if self.rounding not in ROUNDING:
            raise ConfigError(f"rounding must be one of {sorted(k for k in ROUNDING if k)}")

    def to_dict(self):
        return {"epsilon": self.epsilon, "horizons": list(self.horizons),
                "rounding": self.rounding}


@dataclass(frozen=True)
class ReportRow:
    model: str
    t: int
    MAPE: float
    ACC: float


@dataclass
class EvalReport:
    rows: list
    M: int
    config: EvalConfig = field(default_factory=EvalConfig)

    def get(self, model, t):
        for r in self.rows:
            if r.model == model and r.t == t:
                return r
        raise KeyError((model, t))

    def models(self):
        return list(dict.fromkeys(r.model for r in self.rows))

    def series(self, model, metric):
        return [getattr(self.get(model, t), metric) for t in self.config.horizons]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "t", "MAPE", "ACC"])
        for r in self.rows:
            w.writerow([r.model, r.t, repr(r.MAPE), repr(r.ACC)])
        return buf.getvalue()

    @staticmethod
    def rows_from_csv(text):
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != ["model", "t", "MAPE", "ACC"]:
            raise SchemaError(f"unexpected report columns {reader.fieldnames}")
        return [ReportRow(r["model"], int(r["t"]), float(r["MAPE"]), float(r["ACC"]))
                for r in reader]

    def to_json(self):
        return {"M": self.M, "config": self.config.to_dict(),
                "absent_models": [m for m in ABSENT_MODELS if m not in self.models()],
                "rows": [{"model": r.model, "t": r.t, "MAPE": r.MAPE, "ACC": r.ACC}
                         for r in self.rows]}

    @classmethod
    def from_json(cls, obj):
        cfg = obj["config"]
        return cls([ReportRow(**r) for r in obj["rows"]], obj["M"],
                   EvalConfig(cfg["epsilon"], tuple(cfg["horizons"]), cfg.get("rounding")))

    def write(self, csv_path, json_path):
        Path(csv_path).write_text(self.to_csv())
        Path(json_path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    def table(self):
        """Wide rows, one per model in the reference order, ``t{h}_MAPE``/``t{h}_ACC`` cells.

        Models that were not run (the reference table's RPP and SVR) get
        empty cells.
        """
        models = [m for m in TABLE_ORDER if m in self.models() or m in ABSENT_MODELS]
        models += [m for m in self.models() if m not in models]
        out = []
        for m in models:
            row = {"model": m}
            for t in self.config.horizons:
                try:
                    r = self.get(m, t)
                    row[f"t{t}_MAPE"], row[f"t{t}_ACC"] = r.MAPE, r.ACC
                except KeyError:
                    row[f"t{t}_MAPE"] = row[f"t{t}_ACC"] = None
            out.append(row)
        return out

    def table_csv(self):
        rows = self.table()
        cols = ["model"] + [f"t{t}_{m}" for t in self.config.horizons for m in ("MAPE", "ACC")]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([row["model"]] + ["" if row[c] is None else repr(row[c]) for c in cols[1:]])
        return buf.getvalue()


def build_report(predictions, truth, config=EvalConfig()):
    """Per-model, per-horizon MAPE and ACC.

    ``predictions`` maps model name -> {paper_id: predicted counts for
    t = 1..H}; ``truth`` maps paper_id -> observed counts for the same
    offsets. Every model must cover exactly the papers in ``truth``.
    """
    ids = sorted(truth)
    if not ids:
        raise MismatchError("ground truth is empty")
    for model, preds in predictions.items():
        if set(preds) != set(ids):
            missing = sorted(set(ids) - set(preds))[:3]
            extra = sorted(set(preds) - set(ids))[:3]
            raise MismatchError(f"model {model} test set differs from ground truth "
                                f"(missing {missing}, unexpected {extra})")
    rnd = ROUNDING[config.rounding]
    rows = []
    for model, preds in predictions.items():
        for t in config.horizons:
            try:
                pred = np.array([preds[i][t - 1] for i in ids], dtype=np.float64)
                true = np.array([truth[i][t - 1] for i in ids], dtype=np.float64)
            except IndexError:
                raise MismatchError(f"model {model} or ground truth lacks horizon t={t}") from None
            pairs = np.column_stack([rnd(pred), true])
            rows.append(ReportRow(model, t, mape(pairs, ids), acc(pairs, config.epsilon, ids)))
    return EvalReport(rows, len(ids), config)


def distribution_export(predicted, real, num_bins=30):
    """Log-binned histograms of predicted and real counts on shared bins.

    Bins span 1 to the largest count in either series; counts below 1 land
    in the first bin. Returns rows ``(bin_low, bin_high, predicted_count,
    real_count)``.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    real = np.asarray(real, dtype=np.float64)
    if predicted.size == 0 or real.size == 0:
        raise MetricError("distribution export needs nonempty series")
    hi = max(predicted.max(), real.max(), 2.0)
    edges = np.geomspace(1.0, hi, num_bins + 1)
    edges[-1] = hi
    p_counts, _ = np.histogram(np.clip(predicted, 1.0, hi), bins=edges)
    r_counts, _ = np.histogram(np.clip(real, 1.0, hi), bins=edges)
    return [(float(lo), float(h), int(p), int(r))
            for lo, h, p, r in zip(edges[:-1], edges[1:], p_counts, r_counts)]


def distribution_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_low", "bin_high", "predicted_count", "real_count"])
    for lo, hi, p, r in rows:
        w.writerow([repr(lo), repr(hi), p, r])
    return buf.getvalue()


def reference_value(model, t):
    """(MAPE, ACC) reported at full scale, or None for models absent there."""
    return REFERENCE_TABLE.get(model, {}).get(t)

