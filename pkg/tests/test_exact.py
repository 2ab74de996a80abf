import itertools
import math

import numpy as np
import pytest

from conftest import brute_joint, brute_singletons, chain, grid_instance, ising, random_potts, zero_coupling
from dlrinfer.errors import InvalidConfigError, ModelTooLargeError
from dlrinfer.exact import (
    conditional_from_joint,
    exact_marginals,
    exact_neighborhood_marginal,
    joint_probability,
    joint_table,
    partition_function,
)
from dlrinfer.model import (
    IsingParams,
    Region,
    Topology,
    build_ising,
    local_conditional,
    neighborhood,
    torus_grid,
)


def test_single_node_log_partition():
    for phi in (-3.0, 0.0, 1.7):
        m = ising(1, [], 0.0, phi)
        assert partition_function(m) == pytest.approx(math.log1p(math.exp(phi)), abs=1e-14)


def test_disconnected_factorizes():
    m = ising(2, [], 0.0, [0.4, -1.2])
    ref = math.log1p(math.exp(0.4)) + math.log1p(math.exp(-1.2))
    assert partition_function(m) == pytest.approx(ref, abs=1e-14)


def test_3x3_log_partition_plain_sum():
    top = torus_grid(3, 3)
    m = build_ising(IsingParams(top, np.ones(18), np.zeros(9)))
    z = 0.0
    for x in itertools.product((0, 1), repeat=9):
        z += math.exp(sum(x[u] * x[v] for u, v in top.edges))
    assert partition_function(m) == pytest.approx(math.log(z), abs=1e-10)


def test_hard_instance_log_partition():
    m = grid_instance(3, 3, 16.0, 3)
    j = brute_joint(m)
    ex = exact_marginals(m)
    for a, b in zip(ex.singleton_marginals, brute_singletons(m)):
        np.testing.assert_allclose(a, b, atol=1e-12)
    assert j.sum() == pytest.approx(1.0)


def test_zero_coupling_marginals_are_unary():
    m = zero_coupling(5, seed=2, cards=[2, 3, 2, 4, 2])
    for b, u in zip(exact_marginals(m).singleton_marginals, m.unary):
        np.testing.assert_allclose(b, u / u.sum(), atol=1e-14)


def test_chain_hand_enumeration():
    m = chain(3, 1.0, 0.0)
    ex = exact_marginals(m)
    # weights exp(x0 x1 + x1 x2): x1 = 0 gives 4 configs of weight 1, x1 = 1 gives 1 + 2e + e^2
    e = math.e
    z = 4 + (1 + e) ** 2
    np.testing.assert_allclose(ex.singleton_marginals[1], [4 / z, (1 + e) ** 2 / z], atol=1e-14)
    # P(x0, x1): (0,0) 2, (0,1) 1+e, (1,0) 2, (1,1) e(1+e)
    ref = np.array([[2, 1 + e], [2, e * (1 + e)]]) / z
    np.testing.assert_allclose(ex.pairwise_marginals[0], ref, atol=1e-14)


def test_chain_symmetric_middle():
    # with the flip-symmetric field the middle node is exactly uniform
    top = Topology.from_edges(3, [(0, 1), (1, 2)])
    m = build_ising(IsingParams(top, [1.0, 1.0], [-0.5, -1.0, -0.5]))
    np.testing.assert_allclose(exact_marginals(m).singleton_marginals[1], [0.5, 0.5], atol=1e-14)


def test_flip_symmetric_marginals_half():
    top = torus_grid(3, 3)
    theta = np.random.default_rng(0).normal(size=18)
    phi = np.zeros(9)
    for (u, v), t in zip(top.edges, theta):
        phi[u] -= t / 2
        phi[v] -= t / 2
    for b in exact_marginals(build_ising(IsingParams(top, theta, phi))).singleton_marginals:
        np.testing.assert_allclose(b, [0.5, 0.5], atol=1e-12)


def test_joint_probability_examples():
    m = ising(4, [], 0.0, 0.0)
    for x in itertools.product((0, 1), repeat=4):
        assert joint_probability(m, x) == pytest.approx(1 / 16, abs=1e-15)
    assert joint_probability(ising(1, [], 0.0, math.log(3)), [1]) == pytest.approx(0.75)
    p = joint_probability(ising(2, [(0, 1)], 1.0, 0.0), [1, 1])
    assert p == pytest.approx(math.e / (3 + math.e), abs=1e-15)


@pytest.mark.parametrize("bad", [[0, 2], [0], [0.5, 1], [-1, 0]])
def test_joint_probability_rejects(bad):
    with pytest.raises(InvalidConfigError):
        joint_probability(ising(2, [(0, 1)], 1.0, 0.0), bad)


def test_joint_sums_to_one_16_nodes(easy4):
    lz = partition_function(easy4)
    total = 0.0
    for x in itertools.product((0, 1), repeat=16):
        total += joint_probability(easy4, x, lz)
    assert total == pytest.approx(1.0, abs=1e-10)


def test_cap_enforced():
    m = ising(25, [], 0.0, 0.0)
    with pytest.raises(ModelTooLargeError):
        partition_function(m)
    with pytest.raises(ModelTooLargeError):
        joint_table(ising(21, [], 0.0, 0.0))


def test_pair_singleton_consistency():
    m = random_potts(Topology.from_edges(5, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)]),
                     [2, 3, 2, 3, 2], 4)
    ex = exact_marginals(m)
    for t in ex.singleton_marginals + ex.pairwise_marginals:
        assert t.sum() == pytest.approx(1.0, abs=1e-12)
    for (u, v), t in zip(m.topology.edges, ex.pairwise_marginals):
        np.testing.assert_allclose(t.sum(axis=1), ex.singleton_marginals[u], atol=1e-12)
        np.testing.assert_allclose(t.sum(axis=0), ex.singleton_marginals[v], atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_exact_marginals_satisfy_full_dlr(seed):
    m = grid_instance(3, 3, 4.0, seed)
    joint = joint_table(m)
    ex = exact_marginals(m)
    regions = [Region.of(i) for i in range(9)] + [Region.of(u, v) for u, v in m.topology.edges]
    worst = 0.0
    for reg in regions:
        nbr = neighborhood(m, reg)
        mu = exact_neighborhood_marginal(joint, m, reg)
        rhs = 0.0
        for b in itertools.product((0, 1), repeat=len(nbr)):
            rhs = rhs + mu[b] * local_conditional(m, reg, b)
        if len(reg) == 1:
            lhs = ex.singleton_marginals[reg.nodes[0]]
        else:
            lhs = ex.pairwise_marginals[m.topology.edge_id(*reg.nodes)]
        worst = max(worst, np.max(np.abs(lhs - rhs)))
    assert worst < 1e-10


def test_conditional_from_joint_matches_definition():
    m = chain(3, 0.8, 0.2)
    j = brute_joint(m)
    p = conditional_from_joint(j, Region.of(1), (0, 2), (1, 0))
    np.testing.assert_allclose(p, j[1, :, 0] / j[1, :, 0].sum(), atol=1e-15)
