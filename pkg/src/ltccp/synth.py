"""Synthetic citation corpora with known per-paper parameters.

Each paper gets a fitness ``lam`` drawn log-normally. In year offset ``t``
it receives ``Poisson(lam * A[t] * (m + n))`` new citations, where ``n`` is
its running total and ``A[t]`` is the mass a log-normal aging density puts
on ``[t, t + 1)``. Fitness sets how attractive a paper is, ``A`` makes
interest fade, and ``m + n`` is the rich-get-richer term.

Every paper draws from its own child of one ``SeedSequence``, so papers
can be generated in any order or in parallel and the corpus comes out
the same.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import CitationSequence, PaperRecord
from .errors import ConfigError

AGING_KERNELS = ("lognormal", "constant")


@dataclass(frozen=True)
class SynthParams:
    seed: int
    num_papers: int = 2000
    mu_fitness: float = 0.6
    sigma_fitness: float = 0.6
    mu_aging: float = 1.2
    sigma_aging: float = 1.0
    m: float = 8.0
    max_years: int = 11
    first_year: int = 2000
    pub_span: int = 3
    aging: str = "lognormal"

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("synthetic corpus seed must be an integer")
        if self.num_papers < 1 or self.max_years < 1 or self.pub_span < 1:
            raise ConfigError("num_papers, max_years and pub_span must be positive")
        if self.sigma_fitness <= 0 or self.sigma_aging <= 0:
            raise ConfigError("log-normal widths must be positive")
        if self.m <= 0:
            raise ConfigError("reinforcement offset m must be positive")
        if self.aging not in AGING_KERNELS:
            raise ConfigError(f"aging must be one of {AGING_KERNELS}")

    @property
    def end_year(self):
        return self.first_year + self.pub_span - 1 + self.max_years - 1

    def to_dict(self):
        return asdict(self)


def _norm_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def aging_weights(years, mu, sigma):
    """Probability mass of LogNormal(mu, sigma) on each unit interval [t, t+1)."""
    cdf = [0.0] + [_norm_cdf((math.log(t) - mu) / sigma) for t in range(1, years + 1)]
    return np.diff(cdf)


@dataclass
class SynthCorpus:
    sequences: list
    fitness: dict  # paper_id -> lam
    params: SynthParams


def paper_ids(n):
    width = max(5, len(str(n - 1)))
    return [f"p{i:0{width}d}" for i in range(n)]


def _generate_paper(seed_seq, n_years, aging, params, lam=None):
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    z = rng.standard_normal()
    if lam is None:
        lam = math.exp(params.mu_fitness + params.sigma_fitness * z)
    new = np.zeros(n_years, dtype=np.int64)
    total = 0
    for t in range(n_years):
        k = int(rng.poisson(lam * aging[t] * (params.m + total)))
        new[t] = k
        total += k
    return lam, new


def gen_corpus(params, fitness=None):
    """Generate ``params.num_papers`` citation sequences.

    ``fitness`` optionally pins each paper's ``lam`` instead of sampling it
    (the normal draw is still consumed so the Poisson stream is unchanged).
    """
    n = params.num_papers
    if fitness is not None and len(fitness) != n:
        raise ConfigError(f"{len(fitness)} fitness values for {n} papers")
    ids = paper_ids(n)
    children = np.random.SeedSequence(params.seed).spawn(n)
    longest = params.max_years + params.pub_span - 1
    if params.aging == "lognormal":
        aging = aging_weights(longest, params.mu_aging, params.sigma_aging)
    else:
        aging = np.ones(longest)
    sequences, lams = [], {}
    for i, pid in enumerate(ids):
        pub_year = params.first_year + i % params.pub_span
        n_years = params.end_year - pub_year + 1
        lam, new = _generate_paper(children[i], n_years, aging, params,
                                   None if fitness is None else float(fitness[i]))
        sequences.append(CitationSequence(pid, pub_year, new))
        lams[pid] = lam
    return SynthCorpus(sequences, lams, params)


def realize_records(sequences, end_year=None):
    """Paper records whose citation graph reproduces ``sequences`` exactly.

    Citations are carried by stub papers: in calendar year ``y`` stub ``j``
    cites every paper needing more than ``j`` citations that year. One
    reference-free stub is placed in ``end_year`` so the stream itself fixes
    the corpus end.
    """
    if end_year is None:
        end_year = max(s.pub_year + s.T for s in sequences)
    records = [PaperRecord(s.paper_id, s.pub_year, ()) for s in sequences]
    by_year = {}
    for s in sequences:
        for off, k in enumerate(s.yearly_new.tolist()):
            if k:
                by_year.setdefault(s.pub_year + off, []).append((s.paper_id, k))
    by_year.setdefault(end_year, [])
    for year in sorted(by_year):
        cited = by_year[year]
        depth = max((k for _, k in cited), default=0)
        for j in range(max(depth, 1)):
            refs = tuple(pid for pid, k in cited if k > j)
            records.append(PaperRecord(f"c{year}-{j:05d}", year, refs))
    return records


def gini(values):
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = len(x)
    total = x.sum()
    if n == 0 or total == 0:
        return 0.0
    ranks = np.arange(1, n + 1)
    return float(np.sum((2 * ranks - n - 1) * x) / (n * total))


def corpus_stats(sequences, num_bins=20):
    """Summary of the final-count distribution: centre, inequality, histogram."""
    finals = np.array([s.total for s in sequences], dtype=np.float64)
    if finals.size == 0:
        raise ConfigError("corpus_stats needs at least one sequence")
    ordered = np.sort(finals)[::-1]
    total = ordered.sum()
    n = len(ordered)
    top = ordered[: max(1, int(round(0.1 * n)))].sum()
    bottom = ordered[n - int(round(0.5 * n)):].sum() if n > 1 else 0.0
    top_share = float(top / total) if total else 0.0
    bottom_share = float(bottom / total) if total else 0.0

    hi = max(finals.max(), 1.0)
    edges = np.geomspace(1.0, hi + 1.0, num_bins + 1)
    counts, _ = np.histogram(finals[finals >= 1], bins=edges)
    histogram = [{"low": 0.0, "high": 1.0, "papers": int(np.sum(finals < 1))}]
    histogram += [{"low": float(lo), "high": float(h), "papers": int(c)}
                  for lo, h, c in zip(edges[:-1], edges[1:], counts)]
    return {
        "papers": n,
        "mean_final": float(finals.mean()),
        "median_final": float(np.median(finals)),
        "max_final": float(finals.max()),
        "gini": gini(finals),
        "top10_share": top_share,
        "bottom50_share": bottom_share,
        "heavy_tail": bool(top_share > bottom_share),
        "histogram": histogram,
    }
