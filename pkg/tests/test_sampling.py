import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import chain, grid_instance, ising, random_potts, zero_coupling
from dlrinfer.errors import InvalidConfigError, ModelTooLargeError
from dlrinfer.exact import exact_marginals, exact_neighborhood_marginal, joint_table
from dlrinfer.inference.beliefs import init_beliefs
from dlrinfer.inference.diagnostics import bethe_embedding, product_neighborhood
from dlrinfer.inference.engine import RunConfig, fn2_step, fn_step, run_to_convergence
from dlrinfer.model import Region, Topology, neighborhood
from dlrinfer.sampling import (
    ChainConfig,
    KernelMatrix,
    chain_seeds,
    ck_marginal_step,
    detailed_balance_violation,
    explicit_kernel,
    gibbs_estimate,
    gibbs_site_update,
    stationarity_violation,
    sweep_kernel,
)


def test_isolated_node_update_is_fair_coin():
    m = ising(2, [], 0.0, 0.0)
    for x in ([0, 0], [1, 1]):
        assert gibbs_site_update(m, x, 0, 0.49)[0] == 0
        assert gibbs_site_update(m, x, 0, 0.51)[0] == 1


def test_strong_ferromagnet_update():
    top_edges = [(0, 1), (0, 2), (0, 3), (0, 4)]
    phi = -2.0
    m = ising(5, top_edges, 10.0, phi)
    p1 = math.exp(40 + phi) / (1 + math.exp(40 + phi))
    # draws land on 1 unless u exceeds P(x=0)
    assert gibbs_site_update(m, [0, 1, 1, 1, 1], 0, 1 - p1 + 1e-3)[0] == 1
    assert gibbs_site_update(m, [0, 1, 1, 1, 1], 0, 0.999)[0] == 1


def test_off_site_never_changes(easy3):
    rng = np.random.default_rng(0)
    x = rng.integers(0, 2, size=9)
    for _ in range(10_000):
        site = int(rng.integers(0, 9))
        y = gibbs_site_update(easy3, x, site, float(rng.random()))
        mask = np.arange(9) != site
        assert np.array_equal(y[mask], x[mask])
        x = y


@pytest.mark.parametrize("bad", [[0, 0, 2], [0, 1], [0.5, 0, 0]])
def test_update_rejects_bad_config(bad):
    with pytest.raises(InvalidConfigError):
        gibbs_site_update(chain(3), bad, 0, 0.5)


def test_single_node_kernel_rows_are_marginal():
    m = ising(1, [], 0.0, 0.7)
    K = explicit_kernel(m, 0).matrix
    p = 1 / (1 + math.exp(-0.7))
    np.testing.assert_allclose(K, [[1 - p, p], [1 - p, p]], atol=1e-15)


def test_two_node_kernel_by_hand():
    m = ising(2, [(0, 1)], 1.0, [0.3, -0.2])
    K = explicit_kernel(m, 0).matrix
    # configuration index = 2 x0 + x1; site 0 flips x0 with x1 frozen
    p_given0 = 1 / (1 + math.exp(-0.3))
    p_given1 = 1 / (1 + math.exp(-1.3))
    ref = np.array([
        [1 - p_given0, 0, p_given0, 0],
        [0, 1 - p_given1, 0, p_given1],
        [1 - p_given0, 0, p_given0, 0],
        [0, 1 - p_given1, 0, p_given1],
    ])
    np.testing.assert_allclose(K, ref, atol=1e-15)


def test_chain_kernel_stationary():
    m = chain(3, 1.2, 0.1)
    p = joint_table(m).reshape(-1)
    for i in range(3):
        K = explicit_kernel(m, i).matrix
        np.testing.assert_allclose(K.T @ p, p, atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("site", [0, 4, 8])
def test_kernel_properties_3x3(seed, site):
    m = grid_instance(3, 3, 4.0, seed)
    k = explicit_kernel(m, site)
    np.testing.assert_allclose(k.matrix.sum(axis=1), 1.0, atol=1e-12)
    assert detailed_balance_violation(k, m) < 1e-12
    assert stationarity_violation(k, m) < 1e-12
    # zero unless source and target agree off the site
    idx = np.arange(512)
    bits = (idx[:, None] >> (8 - np.arange(9))) & 1
    off = np.delete(np.arange(9), site)
    agree = np.all(bits[:, None, off] == bits[None, :, off], axis=2)
    assert np.all(k.matrix[~agree] == 0)


def test_kernel_properties_12_nodes():
    top = Topology.from_edges(12, [(i, (i + 1) % 12) for i in range(12)] + [(0, 6), (3, 9)])
    rng = np.random.default_rng(1)
    from dlrinfer.model import IsingParams, build_ising

    m = build_ising(IsingParams(top, 2 * rng.normal(size=14), rng.normal(size=12)))
    k = explicit_kernel(m, 5)
    assert detailed_balance_violation(k, m) < 1e-12
    assert stationarity_violation(k, m) < 1e-12


def test_sweep_kernel_preserves_joint():
    m = grid_instance(3, 3, 1.0, 4)
    assert stationarity_violation(sweep_kernel(m), m) < 1e-10
    assert stationarity_violation(sweep_kernel(m, [8, 2, 5, 0, 1, 7, 3, 6, 4]), m) < 1e-10


def test_ternary_kernel_balance():
    top = Topology.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    m = random_potts(top, [3, 2, 3, 2], 7)
    for i in range(4):
        assert detailed_balance_violation(explicit_kernel(m, i), m) < 1e-12


def test_corrupted_kernel_detected():
    m = chain(3, 0.8, 0.1)
    k = explicit_kernel(m, 1).matrix.copy()
    row = k[2]
    row[np.flatnonzero(row)[0]] += 0.05
    k[2] = row / row.sum()
    assert detailed_balance_violation(KernelMatrix(1, k), m) > 1e-3


def test_uniform_model_balance_exact():
    m = ising(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)], 0.0, 0.0)
    assert detailed_balance_violation(explicit_kernel(m, 3), m) < 1e-15


def test_kernel_cap():
    m = ising(15, [], 0.0, 0.0)
    with pytest.raises(ModelTooLargeError):
        explicit_kernel(m, 0)


# ---------------------------------------------------------------------------
# Chapman-Kolmogorov step


@pytest.mark.parametrize("seed", [0, 3])
def test_ck_product_input_equals_fn_step(seed):
    m = grid_instance(4, 4, 4.0, seed)
    b = init_beliefs(m, 1, seed=seed)
    nxt = fn_step(m, b)
    for i in range(16):
        nbr = neighborhood(m, Region.of(i))
        out = ck_marginal_step(m, Region.of(i), product_neighborhood(b.singletons, nbr))
        assert np.array_equal(out, nxt.singletons[i])


def test_ck_product_input_equals_fn2_step(easy4):
    b = init_beliefs(easy4, 1.5, seed=2)
    nxt = fn2_step(easy4, b)
    for e, (u, v) in enumerate(easy4.topology.edges):
        nbr = neighborhood(easy4, Region.of(u, v))
        out = ck_marginal_step(easy4, Region.of(u, v), product_neighborhood(b.singletons, nbr))
        assert np.array_equal(out, nxt.pair_tables[e])


def test_ck_exact_neighborhood_gives_exact_marginal():
    m = grid_instance(3, 3, 4.0, 2)
    joint = joint_table(m)
    ex = exact_marginals(m)
    for reg in (Region.of(0), Region.of(4), Region.of(0, 1)):
        out = ck_marginal_step(m, reg, exact_neighborhood_marginal(joint, m, reg))
        ref = (ex.singleton_marginals[reg.nodes[0]] if len(reg) == 1
               else ex.pairwise_marginals[m.topology.edge_id(*reg.nodes)])
        np.testing.assert_allclose(out, ref, atol=1e-12)


def test_ck_bethe_input_returns_bp_fixed_point(easy4):
    b, _ = run_to_convergence("bp", easy4, RunConfig(tolerance=1e-13))
    for reg in (Region.of(6), Region.of(5, 6)):
        emb = bethe_embedding(b, reg)
        nbr_table = emb.table.sum(axis=tuple(range(len(reg))))
        out = ck_marginal_step(easy4, reg, nbr_table)
        ref = b.singletons[6] if len(reg) == 1 else b.pair(5, 6)
        np.testing.assert_allclose(out, ref, atol=1e-10)


def test_ck_rejects_unnormalized(easy3):
    with pytest.raises(InvalidConfigError):
        ck_marginal_step(easy3, Region.of(0), np.ones(16))


# ---------------------------------------------------------------------------
# Gibbs estimates


def test_zero_coupling_gibbs():
    m = zero_coupling(4, seed=1, cards=[2, 3, 2, 3])
    res = gibbs_estimate(m, ChainConfig(sweeps=100_000, chains=8, seed=1))
    for b, se, u in zip(res.beliefs.singletons, res.standard_errors, m.unary):
        assert np.all(np.abs(b - u / u.sum()) <= 3 * se + 1e-12)


def test_gibbs_deterministic(easy3):
    cfg = ChainConfig(sweeps=2000, chains=3, seed=11)
    a, b = gibbs_estimate(easy3, cfg), gibbs_estimate(easy3, cfg)
    assert np.array_equal(a.chain_means, b.chain_means)
    c = gibbs_estimate(easy3, ChainConfig(sweeps=2000, chains=3, seed=12))
    assert not np.array_equal(a.chain_means, c.chain_means)


def test_gibbs_pairwise_and_random_order(easy3):
    cfg = ChainConfig(sweeps=20_000, chains=4, seed=0, sweep_order="random", pairwise=True)
    res = gibbs_estimate(easy3, cfg)
    ex = exact_marginals(easy3)
    assert res.beliefs.level == 2
    for t, p in zip(res.beliefs.pair_tables, ex.pairwise_marginals):
        np.testing.assert_allclose(t, p, atol=0.03)
    doc = res.to_dict()
    assert doc["chain_seed_keys"] == [[k] for k in range(4)]


def test_chain_seeds_spawned():
    seeds = chain_seeds(ChainConfig(seed=5, chains=3))
    assert [s.spawn_key for s in seeds] == [(0,), (1,), (2,)]
    assert all(s.entropy == 5 for s in seeds)


@pytest.mark.parametrize("kw", [dict(sweeps=10, burn_in=10), dict(chains=0), dict(sweep_order="zigzag"),
                                dict(seed=-1)])
def test_chain_config_validation(kw):
    with pytest.raises(InvalidConfigError):
        ChainConfig(**kw)


def test_default_burn_in():
    assert ChainConfig(sweeps=1000).burn_in == 100


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.floats(0, 1, exclude_max=True))
def test_site_update_follows_conditional(seed, u):
    m = grid_instance(3, 3, 4.0, seed % 100)
    from dlrinfer.model import local_conditional

    x = np.random.default_rng(seed).integers(0, 2, size=9)
    nbr = neighborhood(m, Region.of(4))
    p = local_conditional(m, Region.of(4), [x[k] for k in nbr])
    expected = 0 if u < p[0] else 1
    assert gibbs_site_update(m, x, 4, u)[4] == expected
