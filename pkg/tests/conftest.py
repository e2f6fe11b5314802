import math

import numpy as np
import pytest

from ltccp import data, nn, synth


def random_model(seed, input_dim=3, hidden_dim=8, num_bins=6, scale=1.0):
    """Two-layer model with every tensor drawn from U(-scale, scale)."""
    rng = np.random.default_rng(seed)
    m = nn.init_model(input_dim, hidden_dim, bin_edges=np.geomspace(1, 100, num_bins - 1),
                      seed=seed)
    return m.replace_tensors({k: rng.uniform(-scale, scale, size=v.shape)
                              for k, v in m.named_tensors().items()}), rng


def gradcheck_fixture(seed):
    """hidden 8, 6 timesteps, loss on the last 3 steps."""
    m, rng = random_model(seed)
    seq = rng.normal(size=(6, 3))
    targets = rng.integers(0, 6, size=6)
    mask = np.zeros(6, dtype=bool)
    mask[-3:] = True
    return m, seq, targets, mask


def scalar_cell(params, x, h_prev, c_prev):
    """Plain-Python LSTM step over lists, written independently of the vector code."""
    H = len(h_prev)
    z = list(h_prev) + list(x)

    def row(W, b, i):
        return sum(W[i][j] * z[j] for j in range(len(z))) + b[i]

    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    h, c = [], []
    for i in range(H):
        f = sig(row(params.W_f, params.b_f, i))
        u = sig(row(params.W_u, params.b_u, i))
        cand = math.tanh(row(params.W_c, params.b_c, i))
        r = sig(row(params.W_r, params.b_r, i))
        ci = f * c_prev[i] + u * cand
        c.append(ci)
        h.append(r * math.tanh(ci))
    return h, c


@pytest.fixture(scope="session")
def small_cohort():
    corpus = synth.gen_corpus(synth.SynthParams(seed=3, num_papers=200))
    return data.filter_cohort(corpus.sequences)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
