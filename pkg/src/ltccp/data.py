"""Citation records -> per-paper yearly citation sequences -> experimental cohort.

A citation from paper ``a`` to paper ``b`` is dated by ``a``'s publication
year, so ``yearly_new[t]`` for ``b`` counts the distinct citers published
``t`` years after ``b``.
"""
from __future__ import annotations

import gzip
import io
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError, MissingInputError, SchemaError, ShapeError, UsageError

log = logging.getLogger(__name__)

MIN_YEAR, MAX_YEAR = 1800, 2100


@dataclass(frozen=True)
class PaperRecord:
    id: str
    year: int
    references: tuple = ()

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise SchemaError(f"paper id must be a nonempty string, got {self.id!r}")
        if isinstance(self.year, bool) or not isinstance(self.year, int):
            raise SchemaError(f"paper {self.id}: year must be an integer, got {self.year!r}")
        if not MIN_YEAR <= self.year <= MAX_YEAR:
            raise SchemaError(f"paper {self.id}: year {self.year} outside {MIN_YEAR}-{MAX_YEAR}")
        refs = self.references
        if not isinstance(refs, (list, tuple)) or not all(isinstance(r, str) for r in refs):
            raise SchemaError(f"paper {self.id}: references must be a list of strings")
        object.__setattr__(self, "references", tuple(refs))

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict):
            raise SchemaError("record is not a JSON object")
        missing = {"id", "year"} - obj.keys()
        if missing:
            raise SchemaError(f"record missing field(s) {sorted(missing)}")
        return cls(obj["id"], obj["year"], obj.get("references") or ())

    def to_json(self):
        return {"id": self.id, "year": self.year, "references": list(self.references)}


def _open_text(path, mode="rt"):
    path = Path(path)
    if "r" in mode and not path.exists():
        raise MissingInputError(f"no such file: {path}")
    if path.suffix == ".gz":
        # mtime=0 keeps compressed output byte-identical across runs
        if "w" in mode:
            return io.TextIOWrapper(gzip.GzipFile(path, "wb", mtime=0), encoding="utf-8")
        return gzip.open(path, mode, encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def read_records(path):
    """Yield :class:`PaperRecord` from newline-delimited JSON (optionally gzipped)."""
    with _open_text(path) as fh:
        lines = enumerate(fh, 1)
        while True:
            try:
                lineno, line = next(lines)
            except StopIteration:
                return
            except (gzip.BadGzipFile, EOFError, UnicodeDecodeError) as e:
                raise SchemaError(f"{path}: unreadable ({e})") from None
            line = line.strip()
            if not line:
                continue
            try:
                yield PaperRecord.from_json(json.loads(line))
            except json.JSONDecodeError as e:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            except SchemaError as e:
                raise SchemaError(f"{path}:{lineno}: {e}") from None


def write_records(records, path):
    with _open_text(path, "wt") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")


@dataclass
class CitationSequence:
    paper_id: str
    pub_year: int
    yearly_new: np.ndarray

    def __post_init__(self):
        self.yearly_new = np.asarray(self.yearly_new, dtype=np.int64)
        if self.yearly_new.ndim != 1 or np.any(self.yearly_new < 0):
            raise SchemaError(f"paper {self.paper_id}: yearly_new must be a nonnegative vector")

    @property
    def cumulative(self):
        return np.cumsum(self.yearly_new)

    @property
    def T(self):
        return len(self.yearly_new) - 1

    @property
    def total(self):
        return int(self.yearly_new.sum())

    def __eq__(self, other):
        if not isinstance(other, CitationSequence):
            return NotImplemented
        return (self.paper_id == other.paper_id and self.pub_year == other.pub_year
                and np.array_equal(self.yearly_new, other.yearly_new))

    def to_json(self):
        return {"paper_id": self.paper_id, "pub_year": self.pub_year,
                "yearly_new": self.yearly_new.tolist()}

    @classmethod
    def from_json(cls, obj):
        try:
            return cls(obj["paper_id"], int(obj["pub_year"]), obj["yearly_new"])
        except (KeyError, TypeError) as e:
            raise SchemaError(f"bad cohort line: {e}") from None


@dataclass
class IngestResult:
    sequences: dict  # paper_id -> CitationSequence, sorted by id
    end_year: int
    anomalies: dict = field(default_factory=dict)


def ingest(records, end_year=None):
    """Count citations per paper and year offset.

    Self-citations and references to ids missing from ``records`` are
    ignored; citations dated before the cited paper's publication are
    dropped and tallied in ``anomalies``. Sequences run from the
    publication year through ``end_year`` (default: latest year seen).
    """
    years = {}
    refs = {}
    for rec in records:
        known = years.get(rec.id)
        if known is not None and known != rec.year:
            raise IngestionError(f"paper id {rec.id!r} appears with years {known} and {rec.year}")
        years[rec.id] = rec.year
        refs.setdefault(rec.id, set()).update(rec.references)
    if not years:
        raise UsageError("no records to ingest")
    if end_year is None:
        end_year = max(years.values())

    tally = Counter()
    counts = {}
    for citer in sorted(refs):
        cy = years[citer]
        for cited in refs[citer]:
            if cited == citer:
                tally["self_citations"] += 1
                continue
            py = years.get(cited)
            if py is None:
                tally["dangling_references"] += 1
                continue
            if cy < py:
                tally["citations_before_publication"] += 1
                continue
            if cy > end_year:
                tally["citations_after_end_year"] += 1
                continue
            counts.setdefault(cited, Counter())[cy - py] += 1

    sequences = {}
    for pid in sorted(years):
        py = years[pid]
        if py > end_year:
            tally["papers_after_end_year"] += 1
            continue
        new = np.zeros(end_year - py + 1, dtype=np.int64)
        for off, n in counts.get(pid, {}).items():
            new[off] = n
        sequences[pid] = CitationSequence(pid, py, new)

    anomalies = {
        "papers": len(years),
        "edges_counted": int(sum(s.total for s in sequences.values())),
        "self_citations": tally["self_citations"],
        "dangling_references": tally["dangling_references"],
        "citations_before_publication": tally["citations_before_publication"],
        "citations_after_end_year": tally["citations_after_end_year"],
        "papers_after_end_year": tally["papers_after_end_year"],
        "end_year": int(end_year),
    }
    if anomalies["citations_before_publication"]:
        log.warning("dropped %d citations dated before the cited paper",
                    anomalies["citations_before_publication"])
    return IngestResult(sequences, int(end_year), anomalies)


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

def _log_new(new, cum, t, train_years):
    return np.log1p(new)


def _log_cum(new, cum, t, train_years):
    return np.log1p(cum)


def _age(new, cum, t, train_years):
    return np.broadcast_to(np.asarray(t, dtype=np.float64) / train_years, np.shape(new))


FEATURES = {"log_new": _log_new, "log_cum": _log_cum, "age": _age}
DEFAULT_FEATURES = ("log_new", "log_cum", "age")


@dataclass(frozen=True)
class FeatureConfig:
    names: tuple = DEFAULT_FEATURES
    train_years: int = 5

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        unknown = [n for n in self.names if n not in FEATURES]
        if unknown or not self.names:
            raise ConfigError(f"unknown feature(s) {unknown}; choose from {sorted(FEATURES)}")
        if self.train_years <= 0:
            raise ConfigError("train_years must be positive")

    @property
    def K(self):
        return len(self.names)


def featurize_counts(new, cum, t, config):
    """Feature vectors for arrays of (new citations, cumulative count) at offset(s) ``t``.

    Broadcasts over the inputs; the feature axis is appended last. Used both
    for observed years and for the model's own predicted counts.
    """
    new = np.asarray(new, dtype=np.float64)
    cum = np.asarray(cum, dtype=np.float64)
    cols = [np.asarray(FEATURES[n](new, cum, t, config.train_years), dtype=np.float64)
            for n in config.names]
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def featurize(seq, t, config=FeatureConfig()):
    if not 0 <= t <= seq.T:
        raise UsageError(f"year offset {t} outside 0..{seq.T} for paper {seq.paper_id}")
    return featurize_counts(seq.yearly_new[t], seq.cumulative[t], t, config)


# ---------------------------------------------------------------------------
# cohort
# ---------------------------------------------------------------------------

@dataclass
class Cohort:
    sequences: list
    train_years: int = 5
    horizon: int = 5
    min_citations: int = 5
    features: FeatureConfig = field(default_factory=FeatureConfig)

    @property
    def M(self):
        return len(self.sequences)

    @property
    def K(self):
        return self.features.K

    def ids(self):
        return [s.paper_id for s in self.sequences]

    def metadata(self):
        return {"M": self.M, "train_years": self.train_years, "horizon": self.horizon,
                "min_citations": self.min_citations, "features": list(self.features.names)}


def filter_cohort(sequences, min_citations=5, window=5, horizon=5, features=None):
    """Keep papers with more than ``min_citations`` by offset ``window`` and
    enough observed years to score ``horizon`` years beyond it."""
    if isinstance(sequences, dict):
        sequences = sequences.values()
    if features is None:
        features = FeatureConfig(train_years=window)
    elif features.train_years != window:
        raise ConfigError("feature config train_years must equal the cohort window")
    need = window + horizon + 1
    kept = [s for s in sequences
            if len(s.yearly_new) >= need and s.cumulative[window] > min_citations]
    kept.sort(key=lambda s: s.paper_id)
    if not kept:
        log.warning("cohort filter kept no papers (min_citations=%d, window=%d, horizon=%d)",
                    min_citations, window, horizon)
    return Cohort(kept, window, horizon, min_citations, features)


def write_cohort(cohort, path):
    """Cohort lines go to ``path``; window/horizon/features to ``<path>.meta.json``."""
    path = Path(path)
    with _open_text(path, "wt") as fh:
        for s in cohort.sequences:
            fh.write(json.dumps(s.to_json(), separators=(",", ":")) + "\n")
    meta = Path(str(path) + ".meta.json")
    meta.write_text(json.dumps(cohort.metadata(), indent=2, sort_keys=True) + "\n")


def read_cohort(path):
    path = Path(path)
    meta_path = Path(str(path) + ".meta.json")
    if not meta_path.exists():
        raise MissingInputError(f"cohort metadata not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    seqs = []
    with _open_text(path) as fh:
        for line in fh:
            if line.strip():
                seqs.append(CitationSequence.from_json(json.loads(line)))
    if len(seqs) != meta["M"]:
        raise SchemaError(f"{path}: {len(seqs)} papers but metadata says {meta['M']}")
    features = FeatureConfig(tuple(meta["features"]), meta["train_years"])
    return Cohort(seqs, meta["train_years"], meta["horizon"], meta["min_citations"], features)


# ---------------------------------------------------------------------------
# supervised examples
# ---------------------------------------------------------------------------

@dataclass
class Example:
    paper_id: str
    inputs: np.ndarray  # (train_years + 1, K) features for offsets 0..train_years
    observed: np.ndarray  # cumulative counts at offsets 0..train_years
    targets: np.ndarray  # cumulative counts at train_years + 1 .. train_years + horizon
    future_inputs: np.ndarray  # (horizon, K) ground-truth features for the target years


def make_example(seq, train_years, horizon, features):
    if seq.T < train_years + horizon:
        raise ShapeError(
            f"paper {seq.paper_id} has {seq.T + 1} years, needs {train_years + horizon + 1}")
    cum = seq.cumulative
    n = train_years + horizon + 1
    offsets = np.arange(n)
    feats = featurize_counts(seq.yearly_new[:n], cum[:n], offsets, features)
    return Example(
        paper_id=seq.paper_id,
        inputs=feats[: train_years + 1],
        observed=cum[: train_years + 1].astype(np.float64),
        targets=cum[train_years + 1: n].astype(np.float64),
        future_inputs=feats[train_years + 1:],
    )


def partition(ids, fractions=(0.7, 0.1, 0.2), seed=0):
    """Seeded shuffle of ``ids`` into train/validation/test lists."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or sum(fractions) > 1 + 1e-12:
        raise ConfigError(f"split fractions {fractions} must be three nonnegative numbers summing to at most 1")
    ids = sorted(ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = math.floor(fractions[0] * len(ids))
    n_val = math.floor(fractions[1] * len(ids))
    if abs(sum(fractions) - 1.0) < 1e-9:
        n_test = len(ids) - n_train - n_val  # rounding remainder goes to test
    else:
        n_test = math.floor(fractions[2] * len(ids))
    picked = [ids[i] for i in order]
    return {
        "train": sorted(picked[:n_train]),
        "validation": sorted(picked[n_train:n_train + n_val]),
        "test": sorted(picked[n_train + n_val:n_train + n_val + n_test]),
    }


def split(cohort, fractions=(0.7, 0.1, 0.2), seed=0):
    """Examples for every cohort member, grouped by a seeded train/validation/test partition."""
    parts = partition(cohort.ids(), fractions, seed)
    by_id = {s.paper_id: s for s in cohort.sequences}
    return {name: [make_example(by_id[i], cohort.train_years, cohort.horizon, cohort.features)
                   for i in members]
            for name, members in parts.items()}
