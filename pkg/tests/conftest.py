import itertools

import numpy as np
import pytest

from dlrinfer.model import (
    InstanceConfig,
    IsingParams,
    PairwiseModel,
    Topology,
    build_ising,
    random_ising_instance,
    torus_grid,
)


def ising(n, edges, theta, phi):
    top = Topology.from_edges(n, edges)
    return build_ising(IsingParams(top, np.broadcast_to(theta, len(top.edges)),
                                   np.broadcast_to(phi, n)))


def chain(n=3, theta=1.0, phi=0.0):
    return ising(n, [(i, i + 1) for i in range(n - 1)], theta, phi)


def random_tree(n, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    top = Topology.from_edges(n, edges)
    return build_ising(IsingParams(top, scale * rng.normal(size=n - 1), 0.5 * rng.normal(size=n)))


def random_potts(top, cards, seed):
    """Generic positive tables, used where Ising structure must not matter."""
    rng = np.random.default_rng(seed)
    unary = [rng.uniform(0.2, 2.0, size=c) for c in cards]
    pair = [rng.uniform(0.2, 2.0, size=(cards[u], cards[v])) for u, v in top.edges]
    return PairwiseModel(top, tuple(cards), tuple(unary), tuple(pair))


def zero_coupling(n=4, seed=0, cards=None):
    """Nodes on a cycle with constant pair tables and random unary tables."""
    rng = np.random.default_rng(seed)
    cards = cards or [2] * n
    top = Topology.from_edges(n, [(i, (i + 1) % n) for i in range(n)])
    unary = [rng.uniform(0.1, 3.0, size=c) for c in cards]
    pair = [np.full((cards[u], cards[v]), 0.7) for u, v in top.edges]
    return PairwiseModel(top, tuple(cards), tuple(unary), tuple(pair))


def grid_instance(rows, cols, var_theta, seed, var_phi=0.1):
    return build_ising(random_ising_instance(InstanceConfig(rows, cols, var_theta, var_phi, seed)))


def brute_joint(model):
    """Plain product-of-potentials enumeration, independent of the exact module."""
    cards = model.cardinalities
    w = np.zeros(cards)
    for x in itertools.product(*[range(c) for c in cards]):
        p = 1.0
        for i, xi in enumerate(x):
            p *= model.unary[i][xi]
        for (u, v), t in zip(model.topology.edges, model.pairwise):
            p *= t[x[u], x[v]]
        w[x] = p
    return w / w.sum()


def brute_singletons(model):
    j = brute_joint(model)
    n = model.node_count
    return [j.sum(axis=tuple(a for a in range(n) if a != i)) for i in range(n)]


@pytest.fixture(scope="session")
def torus3():
    return torus_grid(3, 3)


@pytest.fixture(scope="session")
def easy3():
    return grid_instance(3, 3, 0.1, 7)


@pytest.fixture(scope="session")
def easy4():
    return grid_instance(4, 4, 0.1, 0)


VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request, capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number, clauses):
        ok = all(passed for _, passed in clauses)
        detail = "; ".join(f"{'ok' if passed else 'FAILED'} {text}" for text, passed in clauses)
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        request.config.stash[VERDICTS].append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record
