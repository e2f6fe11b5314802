"""Command-line pipeline: gen -> ingest -> train -> predict -> eval -> report.

Every stage reads and writes files in a work directory (``--workdir``),
so stages can be rerun on their own. Settings come from an optional TOML
file (``--config``) with a handful of flag overrides; each stage writes
``manifest.<stage>.json`` holding the resolved settings, the package
version and hashes of its inputs and outputs.

Exit codes: 0 ok, 2 usage/config, 3 missing input, 4 schema, 5 dimension
mismatch, 6 metric, 7 training, 8 prediction/truth id mismatch, 1 other.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, data, evaluation, synth
from .errors import ConfigError, LtccpError, MissingInputError, SchemaError, ShapeError
from .models import MODEL_NAMES, cart, linear
from .models.ltccp import TrainConfig, train_ltccp

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("ltccp")

STAGES = ("gen", "ingest", "train", "predict", "eval", "report")

DEFAULTS = {
    "seed": 0,
    "synth": {f.name: f.default for f in fields(synth.SynthParams) if f.name != "seed"},
    "data": {"min_citations": 5, "train_years": 5, "horizon": 5,
             "features": list(data.DEFAULT_FEATURES), "end_year": None},
    "train": {**{k: v for k, v in TrainConfig(seed=0).to_dict().items() if k != "seed"},
              "cart_max_depth": 6, "cart_min_leaf": 5},
    "eval": {"epsilon": evaluation.DEFAULT_EPSILON, "horizons": None, "rounding": None,
             "distribution_t": 5, "distribution_bins": 30},
    "paths": {
        "corpus": "corpus.jsonl.gz",
        "truth": "truth.json",
        "corpus_stats": "corpus_stats.json",
        "cohort": "cohort.jsonl",
        "anomalies": "anomalies.json",
        "split": "split.json",
        "model": "ltccp.ckpt.json",
        "lr": "lr.json",
        "cart": "cart.json",
        "curves": "curves.csv",
        "predictions": "predictions.jsonl",
        "report_csv": "report.csv",
        "report_json": "report.json",
        "table": "comparison_table.csv",
        "reference_table": "reference_table.csv",
        "distribution": "distribution.csv",
    },
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key} must be a table")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def resolve_config(args):
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise MissingInputError(f"no such config file: {path}")
        try:
            doc = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
        cfg = _merge(cfg, doc)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.epochs is not None:
        cfg["train"]["epochs"] = args.epochs
    if args.epsilon is not None:
        cfg["eval"]["epsilon"] = args.epsilon
    if args.train_years is not None:
        cfg["data"]["train_years"] = args.train_years
    if args.horizon is not None:
        cfg["data"]["horizon"] = args.horizon
    if cfg["eval"]["horizons"] is None:
        cfg["eval"]["horizons"] = list(range(1, cfg["data"]["horizon"] + 1))
    return cfg


def synth_params(cfg):
    try:
        return synth.SynthParams(seed=cfg["seed"], **cfg["synth"])
    except TypeError as e:
        raise ConfigError(str(e)) from None


def train_config(cfg):
    kw = {k: v for k, v in cfg["train"].items() if not k.startswith("cart_")}
    kw["features"] = tuple(cfg["data"]["features"])
    return TrainConfig(seed=cfg["seed"], **kw)


def eval_config(cfg):
    e = cfg["eval"]
    return evaluation.EvalConfig(e["epsilon"], tuple(e["horizons"]), e["rounding"])


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

class Workspace:
    def __init__(self, root, cfg):
        self.root = Path(root)
        self.cfg = cfg

    def path(self, key):
        return self.root / self.cfg["paths"][key]

    def need(self, key):
        p = self.path(key)
        if not p.exists():
            raise MissingInputError(f"missing input {key}: {p}")
        return p


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e.msg})") from None


def write_manifest(ws, stage, inputs, outputs):
    _dump_json(ws.root / f"manifest.{stage}.json", {
        "stage": stage,
        "version": __version__,
        "config": ws.cfg,
        "inputs": {str(p.name): _sha256(p) for p in inputs},
        "outputs": {str(p.name): _sha256(p) for p in outputs},
    })


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def cmd_gen(ws):
    params = synth_params(ws.cfg)
    corpus = synth.gen_corpus(params)
    records = synth.realize_records(corpus.sequences, params.end_year)
    data.write_records(records, ws.path("corpus"))
    _dump_json(ws.path("truth"), corpus.fitness)
    stats = synth.corpus_stats(corpus.sequences)
    _dump_json(ws.path("corpus_stats"), stats)
    write_manifest(ws, "gen", [], [ws.path("corpus"), ws.path("truth"), ws.path("corpus_stats")])
    log.info("generated %d papers (%d records)", params.num_papers, len(records))


def cmd_ingest(ws):
    d = ws.cfg["data"]
    src = ws.need("corpus")
    result = data.ingest(data.read_records(src), end_year=d["end_year"])
    features = data.FeatureConfig(tuple(d["features"]), d["train_years"])
    cohort = data.filter_cohort(result.sequences, d["min_citations"], d["train_years"],
                                d["horizon"], features)
    data.write_cohort(cohort, ws.path("cohort"))
    _dump_json(ws.path("anomalies"), {**result.anomalies, "cohort_size": cohort.M})
    meta = Path(str(ws.path("cohort")) + ".meta.json")
    write_manifest(ws, "ingest", [src], [ws.path("cohort"), meta, ws.path("anomalies")])
    log.info("cohort of %d papers from %d sequences", cohort.M, len(result.sequences))


def _load_cohort(ws):
    cohort = data.read_cohort(ws.need("cohort"))
    d = ws.cfg["data"]
    if (cohort.train_years, cohort.horizon) != (d["train_years"], d["horizon"]):
        raise ShapeError(f"cohort was built with train_years={cohort.train_years}, "
                         f"horizon={cohort.horizon}; config asks for "
                         f"{d['train_years']}/{d['horizon']}")
    if list(cohort.features.names) != list(d["features"]):
        raise ShapeError(f"cohort features {list(cohort.features.names)} differ from "
                         f"config features {list(d['features'])}")
    return cohort


def _examples(cohort, ids):
    by_id = {s.paper_id: s for s in cohort.sequences}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise SchemaError(f"split refers to papers not in the cohort: {missing[:3]}")
    return [data.make_example(by_id[i], cohort.train_years, cohort.horizon, cohort.features)
            for i in ids]


def cmd_train(ws):
    cohort = _load_cohort(ws)
    tc = train_config(ws.cfg)
    parts = data.partition(cohort.ids(), tc.fractions, tc.seed)
    _dump_json(ws.path("split"), parts)
    splits = {k: _examples(cohort, v) for k, v in parts.items()}

    lr = linear.train_lr(splits["train"], cohort.features)
    _dump_json(ws.path("lr"), lr.to_json())
    tree = cart.train_cart(splits["train"], ws.cfg["train"]["cart_max_depth"],
                           ws.cfg["train"]["cart_min_leaf"], cohort.features)
    _dump_json(ws.path("cart"), tree.to_json())
    model, trace = train_ltccp(None, tc, splits=splits)
    checkpoint.save_model(model, ws.path("model"))

    cols = ["epoch", "train_loss", "val_loss", "val_mape"]
    ws.path("curves").write_text(_csv_text(
        cols, [[row.get(c, "") if c == "epoch" else repr(row[c]) if c in row else ""
                for c in cols] for row in trace.epochs]))
    outputs = [ws.path(k) for k in ("split", "lr", "cart", "model", "curves")]
    write_manifest(ws, "train", [ws.path("cohort")], outputs)
    log.info("trained; best epoch %d of %d", trace.best_epoch, len(trace.epochs) - 1)


def load_models(ws, cohort):
    ltccp_model = checkpoint.load_model(ws.need("model"))
    lr = linear.LinearBaseline.from_json(_load_json(ws.need("lr")))
    tree = cart.TreeBaseline.from_json(_load_json(ws.need("cart")))
    for name, feats in (("LT-CCP", ltccp_model.features), ("LR", lr.features),
                        ("CART", tree.features)):
        if feats != cohort.features:
            raise ShapeError(f"{name} model was trained on features {list(feats.names)} "
                             f"x {feats.train_years + 1} years; cohort has "
                             f"{list(cohort.features.names)} x {cohort.train_years + 1}")
    return {"LR": lr, "CART": tree, "LT-CCP": ltccp_model}


def cmd_predict(ws):
    cohort = _load_cohort(ws)
    parts = _load_json(ws.need("split"))
    test = _examples(cohort, parts["test"])
    models = load_models(ws, cohort)
    H = cohort.horizon
    lines = []
    for name in MODEL_NAMES:
        preds = models[name].predict(test, H)
        for ex, row in zip(test, preds):
            for t in range(1, H + 1):
                lines.append(json.dumps({"model": name, "paper_id": ex.paper_id, "t": t,
                                         "predicted": float(row[t - 1]),
                                         "observed": float(ex.targets[t - 1])},
                                        separators=(",", ":")))
    ws.path("predictions").write_text("\n".join(lines) + "\n")
    inputs = [ws.path("cohort"), ws.path("split"), ws.path("model"), ws.path("lr"), ws.path("cart")]
    write_manifest(ws, "predict", inputs, [ws.path("predictions")])


def read_predictions(path):
    """model -> paper_id -> list of predicted counts ordered by t."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.setdefault(rec["model"], {}).setdefault(rec["paper_id"], {})[int(rec["t"])] = \
                    float(rec["predicted"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise SchemaError(f"{path}:{lineno}: bad prediction line ({e})") from None
    return {m: {pid: [by_t[t] for t in sorted(by_t)] for pid, by_t in papers.items()}
            for m, papers in out.items()}


def _truth(ws, cohort):
    parts = _load_json(ws.need("split"))
    return {ex.paper_id: ex.targets.tolist() for ex in _examples(cohort, parts["test"])}


def cmd_eval(ws):
    cohort = _load_cohort(ws)
    truth = _truth(ws, cohort)
    preds = read_predictions(ws.need("predictions"))
    report = evaluation.build_report(preds, truth, eval_config(ws.cfg))
    report.write(ws.path("report_csv"), ws.path("report_json"))
    write_manifest(ws, "eval", [ws.path("cohort"), ws.path("split"), ws.path("predictions")],
                   [ws.path("report_csv"), ws.path("report_json")])
    return report


def cmd_report(ws):
    report = evaluation.EvalReport.from_json(_load_json(ws.need("report_json")))
    ws.path("table").write_text(report.table_csv())
    ref_cols = ["model"] + [f"t{t}_{m}" for t in range(1, 6) for m in ("MAPE", "ACC")]
    ref_rows = [[m] + [repr(v) for t in range(1, 6) for v in evaluation.REFERENCE_TABLE[m][t]]
                for m in evaluation.TABLE_ORDER]
    ws.path("reference_table").write_text(_csv_text(ref_cols, ref_rows))

    cohort = _load_cohort(ws)
    truth = _truth(ws, cohort)
    preds = read_predictions(ws.need("predictions"))
    t = ws.cfg["eval"]["distribution_t"]
    if "LT-CCP" not in preds:
        raise SchemaError("predictions file has no LT-CCP rows")
    ids = sorted(truth)
    try:
        predicted = [preds["LT-CCP"][i][t - 1] for i in ids]
        real = [truth[i][t - 1] for i in ids]
    except (KeyError, IndexError):
        raise SchemaError(f"predictions do not cover horizon t={t} for every test paper") from None
    rows = evaluation.distribution_export(predicted, real, ws.cfg["eval"]["distribution_bins"])
    ws.path("distribution").write_text(evaluation.distribution_csv(rows))
    write_manifest(ws, "report", [ws.path("report_json"), ws.path("predictions")],
                   [ws.path("table"), ws.path("reference_table"), ws.path("distribution")])


COMMANDS = {"gen": cmd_gen, "ingest": cmd_ingest, "train": cmd_train, "predict": cmd_predict,
            "eval": cmd_eval, "report": cmd_report}


def build_parser():
    p = argparse.ArgumentParser(prog="ltccp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ltccp {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML settings file")
    common.add_argument("--workdir", default=".", help="directory for stage inputs and outputs")
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--epsilon", type=float)
    common.add_argument("--train-years", type=int)
    common.add_argument("--horizon", type=int)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=COMMANDS[name].__name__[4:] + " stage")
    sub.add_parser("run", parents=[common], help="all stages in order")
    sub.add_parser("show-config", parents=[common], help="print the resolved settings as JSON")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        ws = Workspace(args.workdir, cfg)
        if args.command == "show-config":
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return 0
        ws.root.mkdir(parents=True, exist_ok=True)
        stages = STAGES if args.command == "run" else (args.command,)
        for stage in stages:
            COMMANDS[stage](ws)
    except LtccpError as e:
        print(json.dumps({"error": e.kind, "message": str(e), "exit_code": e.exit_code}),
              file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(json.dumps({"error": "io", "message": str(e), "exit_code": 1}), file=sys.stderr)
        return 1
    return 0


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
