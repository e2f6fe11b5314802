"""Acceptance criteria, one test each.

Every test records a single ``[n] PASS|FAIL|SKIP ...`` line, printed in the
"acceptance criteria" section of the pytest summary, and then asserts the
criterion at its stated tolerance.
"""
import json
import os
import random
import time
from importlib import resources

import numpy as np
import pytest

from ltccp import data, evaluation, nn, synth
from ltccp.cli import main

from conftest import ACCEPTANCE_LINES, gradcheck_fixture, random_model, scalar_cell
from test_data import brute_force_counts, random_records

FIXTURE_CONFIG = str(resources.files("ltccp") / "fixtures" / "synthetic200.toml")


def record(n, ok, detail, skipped=False):
    status = "SKIP" if skipped else ("PASS" if ok else "FAIL")
    ACCEPTANCE_LINES.append(f"[{n}] {status} {detail}")
    print(ACCEPTANCE_LINES[-1])


def test_1_gradient_correctness():
    t0 = time.perf_counter()
    errors = {seed: nn.grad_check(*gradcheck_fixture(seed), fd_step=1e-5) for seed in range(10)}
    elapsed = time.perf_counter() - t0
    worst = max(errors.values())
    over = [s for s, e in errors.items() if e >= 1e-4]
    ok = not over and elapsed < 60
    record(1, ok, f"grad check: max rel error {worst:.3e} over 10 seeds (limit 1e-4), "
                  f"seeds over limit {over}, {elapsed:.1f}s (limit 60s)")
    assert ok


def test_2_equation_conformance():
    worst = 0.0
    for seed in range(100):
        m, rng = random_model(seed, scale=2.0)
        layer = m.layers[seed % 2]
        x = rng.normal(size=layer.input_dim)
        h0, c0 = rng.uniform(-1, 1, layer.hidden_dim), rng.normal(size=layer.hidden_dim)
        state, _ = nn.lstm_cell_forward(layer, x, nn.LSTMState(h0, c0))
        h, c = scalar_cell(layer, x, h0, c0)
        worst = max(worst, np.max(np.abs(state.h - h)), np.max(np.abs(state.c - c)))
    sum_dev = 0.0
    for seed in range(100):
        m, rng = random_model(seed, scale=8.0)
        _, probs = nn.stacked_forward(m, rng.normal(scale=10, size=(6, 4, 3)))
        sum_dev = max(sum_dev, np.max(np.abs(probs.sum(-1) - 1)))
    extreme = nn.softmax(np.array([[1e300, -1e300, 0.0], [-745.0, 0.0, 745.0]]))
    sum_dev = max(sum_dev, np.max(np.abs(extreme.sum(-1) - 1)))
    ok = worst <= 1e-12 and sum_dev <= 1e-9
    record(2, ok, f"cell vs straight-line oracle max abs diff {worst:.2e} (limit 1e-12); "
                  f"softmax sum deviation {sum_dev:.2e} (limit 1e-9)")
    assert ok


def test_3_metric_oracle():
    pairs = [(13, 10), (5, 10), (14, 10), (20, 20), (1, 4)]
    want_mape = (0.3 + 0.5 + 0.4 + 0.0 + 0.75) / 5
    got_mape, got_acc = evaluation.mape(pairs), evaluation.acc(pairs, 0.3)
    boundary = evaluation.acc([(13, 10)], 0.3)
    ok = (abs(got_mape - want_mape) <= 1e-15 and got_acc == 2 / 5 and boundary == 1.0
          and evaluation.mape([(13, 10), (5, 10)]) == pytest.approx(0.4, abs=1e-15)
          and evaluation.acc([(13, 10), (14, 10)], 0.3) == 0.5)
    record(3, ok, f"5-pair MAPE {got_mape!r} (want {want_mape!r}), ACC {got_acc} (want 0.4), "
                  f"boundary |err|=0.3 ACC {boundary}")
    assert ok


def test_4_ingestion_oracle():
    fixtures = [random_records(seed, n) for seed, n in ((0, 1000), (1, 400), (2, 50))]
    corpus = synth.gen_corpus(synth.SynthParams(seed=1, num_papers=120))
    fixtures.append(synth.realize_records(corpus.sequences))
    mismatches = 0
    perm_failures = 0
    for recs in fixtures:
        res = data.ingest(recs)
        got = {k: v.yearly_new.tolist() for k, v in res.sequences.items()}
        mismatches += got != brute_force_counts(recs, res.end_year)
        rng = random.Random(len(recs))
        for _ in range(5):
            shuffled = recs[:]
            rng.shuffle(shuffled)
            perm_failures += data.ingest(shuffled).sequences != res.sequences
    ok = mismatches == 0 and perm_failures == 0
    record(4, ok, f"ingest vs brute-force recount: {mismatches} mismatching fixtures of "
                  f"{len(fixtures)}; permutation disagreements {perm_failures} of "
                  f"{5 * len(fixtures)}")
    assert ok


def test_5_cohort_protocol():
    rng = np.random.default_rng(5)
    seqs = [data.CitationSequence(f"s{i:04d}", 2000, rng.poisson(rng.uniform(0.2, 3),
                                                                 size=rng.integers(1, 16)))
            for i in range(2000)]
    seqs += synth.gen_corpus(synth.SynthParams(seed=2, num_papers=500)).sequences
    kept = data.filter_cohort(seqs).ids()
    rescan = sorted(s.paper_id for s in seqs
                    if len(s.yearly_new) >= 11 and sum(int(v) for v in s.yearly_new[:6]) > 5)
    ok = kept == rescan
    record(5, ok, f"cohort filter kept {len(kept)} papers, brute-force rescan {len(rescan)}, "
                  f"identical={ok}")
    assert ok


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    wd = tmp_path_factory.mktemp("bench2000")
    t0 = time.perf_counter()
    code = main(["run", "--seed", "7", "--workdir", str(wd)])
    return wd, code, time.perf_counter() - t0


def test_6_synthetic_benchmark(benchmark):
    wd, code, elapsed = benchmark
    assert code == 0
    rep = evaluation.EvalReport.from_json(json.loads((wd / "report.json").read_text()))
    papers = json.loads((wd / "corpus_stats.json").read_text())["papers"]
    lt_mape, lt_acc = rep.series("LT-CCP", "MAPE"), rep.series("LT-CCP", "ACC")
    lr5 = rep.get("LR", 5)
    beats_lr = lt_mape[4] < lr5.MAPE and lt_acc[4] > lr5.ACC
    mape_up = all(a < b for a, b in zip(lt_mape, lt_mape[1:]))
    acc_down = all(a > b for a, b in zip(lt_acc, lt_acc[1:]))
    ok = papers == 2000 and beats_lr and mape_up and acc_down and elapsed < 600
    fmt = lambda xs: "[" + ", ".join(f"{x:.3f}" for x in xs) + "]"
    record(6, ok, f"{papers}-paper corpus, {rep.M} test papers: LT-CCP t5 MAPE {lt_mape[4]:.3f} "
                  f"vs LR {lr5.MAPE:.3f}, ACC {lt_acc[4]:.3f} vs LR {lr5.ACC:.3f}; "
                  f"LT-CCP MAPE {fmt(lt_mape)} ACC {fmt(lt_acc)}; {elapsed:.0f}s (limit 600s)")
    assert ok


def test_7_determinism(tmp_path):
    outs = []
    for name in ("a", "b"):
        wd = tmp_path / name
        assert main(["run", "--config", FIXTURE_CONFIG, "--workdir", str(wd)]) == 0
        outs.append({f: (wd / f).read_bytes() for f in
                     ("report.csv", "report.json", "comparison_table.csv", "distribution.csv")})
    same = [f for f in outs[0] if outs[0][f] == outs[1][f]]
    ok = len(same) == len(outs[0])
    record(7, ok, f"two full runs: {len(same)}/{len(outs[0])} report files byte-identical")
    assert ok


def test_8_monotonicity(benchmark):
    wd, code, _ = benchmark
    assert code == 0
    cohort = data.read_cohort(wd / "cohort.jsonl")
    last = {s.paper_id: int(s.cumulative[cohort.train_years]) for s in cohort.sequences}
    series = {}
    for line in (wd / "predictions.jsonl").read_text().splitlines():
        r = json.loads(line)
        series.setdefault((r["model"], r["paper_id"]), {})[r["t"]] = r["predicted"]
    bad = 0
    for (model, pid), by_t in series.items():
        vals = [by_t[t] for t in sorted(by_t)]
        if any(b < a for a, b in zip(vals, vals[1:])) or vals[0] < last[pid]:
            bad += 1
    ok = bad == 0 and len(series) > 0
    record(8, ok, f"{len(series) - bad}/{len(series)} emitted prediction series non-decreasing "
                  f"and >= last observed count")
    assert ok


def test_9_full_scale():
    dump = os.environ.get("LTCCP_AMINER_DUMP")
    if not dump:
        record(9, False, "full-scale mode needs the external citation dump "
                         "(set LTCCP_AMINER_DUMP to its path)", skipped=True)
        pytest.skip("external dump not available")
    wd = os.environ.get("LTCCP_AMINER_WORKDIR", "aminer-run")
    os.makedirs(wd, exist_ok=True)
    link = os.path.join(wd, "corpus.jsonl.gz" if dump.endswith(".gz") else "corpus.jsonl")
    if not os.path.exists(link):
        os.symlink(os.path.abspath(dump), link)
    args = ["--workdir", wd, "--seed", "0"]
    if not dump.endswith(".gz"):
        cfg = os.path.join(wd, "paths.toml")
        with open(cfg, "w") as fh:
            fh.write('[paths]\ncorpus = "corpus.jsonl"\n')
        args += ["--config", cfg]
    stages = ("ingest", "train", "predict", "eval")
    codes = [main([stage, *args]) for stage in stages]
    assert codes == [0] * len(stages)
    M = data.read_cohort(os.path.join(wd, "cohort.jsonl")).M
    rep = evaluation.EvalReport.from_json(json.loads(open(os.path.join(wd, "report.json")).read()))
    acc = {m: rep.get(m, 5).ACC for m in ("LT-CCP", "CART", "LR")}
    ok = 100_000 <= M <= 200_000 and acc["LT-CCP"] > acc["CART"] > acc["LR"]
    record(9, ok, f"full-scale cohort {M} papers; t5 ACC LT-CCP {acc['LT-CCP']:.3f} > "
                  f"CART {acc['CART']:.3f} > LR {acc['LR']:.3f}")
    assert ok
