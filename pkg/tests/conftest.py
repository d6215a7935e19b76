import functools

import numpy as np
import pytest

from hetinject.graph import HeteroGraph, make_relation
from hetinject.surrogate import TrainConfig, train_surrogate
from hetinject.synth import standard_spec, synth_generate


@functools.lru_cache(maxsize=None)
def standard_graph(seed: int) -> HeteroGraph:
    return synth_generate(standard_spec(), seed)


@functools.lru_cache(maxsize=None)
def standard_surrogate(seed: int, train_ratio: float = 1.0):
    return train_surrogate(standard_graph(seed), TrainConfig(seed=seed, train_ratio=train_ratio))[0]


def tiny_graph(n_a=4, n_b=3, seed=0, dims=(3, 2)) -> HeteroGraph:
    """Two types, cross relation 'ab' and same-type relation 'aa', all type-a nodes labeled."""
    rng = np.random.default_rng(seed)
    n = n_a + n_b
    node_type = np.array([0] * n_a + [1] * n_b)
    a_ids, b_ids = np.arange(n_a), np.arange(n_a, n)
    ab = [(a, b) for a in a_ids for b in b_ids if rng.random() < 0.5]
    aa = [(a, c) for a in a_ids for c in a_ids if a < c and rng.random() < 0.5]
    rels = [make_relation("ab", 0, 1, [x for x, _ in ab], [y for _, y in ab], n),
            make_relation("aa", 0, 0, [x for x, _ in aa], [y for _, y in aa], n)]
    labels = np.full(n, -1)
    labels[a_ids] = rng.integers(0, 3, size=n_a)
    feats = [rng.standard_normal((n_a, dims[0])), rng.standard_normal((n_b, dims[1]))]
    half = n_a // 2
    return HeteroGraph(["a", "b"], node_type, feats, rels, labels,
                       {"train": a_ids[:half], "val": [], "test": a_ids[half:]}, 0, 3,
                       {"a": "content", "b": "attribute"})


@pytest.fixture
def small():
    return tiny_graph()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
