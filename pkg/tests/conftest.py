import itertools

import numpy as np
import pytest

from permlm.data import Label, LabeledExample
from permlm.model import ModelConfig, TransformerWeights

_ACCEPTANCE_LINES = []


def record_acceptance(number, ok, detail):
    _ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def central_difference(f, array, h=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    flat, gflat = array.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def alpha_oracle(matrix):
    """Nominal alpha by explicit pair enumeration (no coincidence matrix)."""
    pairable = [[c for c in row if c is not None] for row in matrix]
    pairable = [row for row in pairable if len(row) >= 2]
    observed = 0.0
    for row in pairable:
        m = len(row)
        for a, b in itertools.permutations(range(m), 2):
            observed += (row[a] != row[b]) / (m - 1)
    pooled = [c for row in pairable for c in row]
    n = len(pooled)
    expected = sum(pooled[a] != pooled[b] for a, b in itertools.permutations(range(n), 2))
    if expected == 0:
        return 1.0
    return 1.0 - (observed / n) / (expected / (n * (n - 1)))


def tiny_config(**overrides):
    base = dict(n_layers=2, d_model=16, n_heads=2, d_ff=32, vocab_size=11, max_len=8, dropout=0.0, predict_fraction=1.0)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_weights():
    return TransformerWeights.init(tiny_config(), seed=3, emb_std=0.5)


TOY_EXAMPLES = [
    ("super padam", Label.Positive),
    ("semma mass", Label.Positive),
    ("mokka film", Label.Negative),
    ("worst ever", Label.Negative),
    ("ok ok thaan", Label.MixedFeelings),
    ("paravala", Label.MixedFeelings),
    ("ithu enna", Label.UnknownState),
    ("trailer eppo", Label.UnknownState),
]


@pytest.fixture
def toy_split():
    return [LabeledExample(t, label) for t, label in TOY_EXAMPLES]
