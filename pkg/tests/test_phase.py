import itertools
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import brute_joint
from dlrinfer.errors import BadBracketError, InvalidConfigError
from dlrinfer.inference.beliefs import BeliefSet, MessageSet
from dlrinfer.inference.engine import (
    RunConfig,
    cp_step,
    fn2_step,
    fn_step,
    mf2_step,
    mf_step,
    run_to_convergence,
)
from dlrinfer.model import Topology, build_ising, ising_from_spins, torus_grid
from dlrinfer.phase import (
    ALGORITHMS,
    REFERENCE_TC,
    CriticalSearchConfig,
    HomogeneousState,
    bp_linearized_tc,
    critical_table,
    critical_temperature,
    homogeneous_step,
    spontaneous_magnetization,
)


def grid_ferromagnet(t):
    """4x4 torus with coupling 1/t; locally identical to the infinite grid for edge regions."""
    return build_ising(ising_from_spins(torus_grid(4, 4), 1.0 / t))


def _uniform(model, level, p):
    cards = model.cardinalities
    single = np.array([1 - p, p])
    if level == 1:
        return BeliefSet(model.topology, cards, 1, [single] * model.node_count)
    return BeliefSet(model.topology, cards, 1.5, None, [np.outer(single, single)] * len(model.topology.edges))


def _mag(beliefs):
    return float(np.mean([2 * b[1] - 1 for b in beliefs.singletons]))


def test_spin_mapping_grid_weights():
    # ratio of two configurations on a 3-cycle equals the spin energy difference
    top = Topology.from_edges(3, [(0, 1), (1, 2), (2, 0)])
    t = 2.3
    joint = brute_joint(build_ising(ising_from_spins(top, 1.0 / t)))
    for x in itertools.product((0, 1), repeat=3):
        s = 2 * np.array(x) - 1
        e = (s[0] * s[1] + s[1] * s[2] + s[2] * s[0]) / t
        assert joint[x] / joint[0, 0, 0] == pytest.approx(math.exp(e - 3 / t), rel=1e-12)


@pytest.mark.parametrize("alg", ALGORITHMS)
def test_zero_is_fixed_point(alg):
    for t in (2.0, 3.0, 6.0):
        assert abs(homogeneous_step(alg, t, 0.0).m) < 1e-15


@pytest.mark.parametrize("alg", ALGORITHMS)
def test_flip_symmetry(alg):
    for m in (0.3, 0.8):
        assert homogeneous_step(alg, 2.7, -m).m == pytest.approx(-homogeneous_step(alg, 2.7, m).m, abs=1e-14)


def test_mf_step_closed_form():
    assert homogeneous_step("mf", 2.0, 0.9).m == pytest.approx(math.tanh(1.8), abs=1e-15)


def test_fn_high_temperature_contracts():
    assert abs(homogeneous_step("fn", 100.0, 0.9).m) < 0.05


@pytest.mark.parametrize("t", [2.2, 3.5])
@pytest.mark.parametrize("p", [0.3, 0.85])
def test_level1_steps_match_grid_engine(t, p):
    m = 2 * p - 1
    model = grid_ferromagnet(t)
    b = _uniform(model, 1, p)
    assert _mag(fn_step(model, b)) == pytest.approx(homogeneous_step("fn", t, m).m, abs=1e-12)
    assert _mag(mf_step(model, b)) == pytest.approx(homogeneous_step("mf", t, m).m, abs=1e-12)
    assert _mag(mf2_step(model, b)) == pytest.approx(homogeneous_step("mf2", t, m).m, abs=1e-12)


@pytest.mark.parametrize("t", [2.2, 3.5])
@pytest.mark.parametrize("p", [0.3, 0.85])
def test_pair_steps_match_grid_engine(t, p):
    m = 2 * p - 1
    model = grid_ferromagnet(t)
    b = _uniform(model, 1.5, p)
    assert _mag(fn2_step(model, b)) == pytest.approx(homogeneous_step("fn2", t, m).m, abs=1e-12)
    out = cp_step(model, b)
    ref = homogeneous_step("cp", t, m)
    for tab in out.pair_tables:
        np.testing.assert_allclose(tab, ref.pair, atol=1e-12)


def test_cp_pair_state_carried():
    s1 = homogeneous_step("cp", 2.6, 0.5)
    s2 = homogeneous_step("cp", 2.6, s1)
    model = grid_ferromagnet(2.6)
    b = BeliefSet(model.topology, model.cardinalities, 1.5, None, [s1.pair] * 32)
    np.testing.assert_allclose(cp_step(model, b).pair_tables[0], s2.pair, atol=1e-12)


@pytest.mark.parametrize("t", [2.5, 4.5])
def test_bp_fixed_point_matches_grid_engine(t):
    model = grid_ferromagnet(t)
    msgs = MessageSet(model.topology, model.cardinalities, [np.array([0.1, 0.9])] * 64)
    # the driver starts from uniform messages, so iterate by hand from the biased ones
    from dlrinfer.inference.engine import beliefs_from_messages, bp_message_step

    for _ in range(5000):
        msgs = bp_message_step(model, msgs)
    got = abs(_mag(beliefs_from_messages(model, msgs)))
    ref = spontaneous_magnetization("bp", t, CriticalSearchConfig(fp_tolerance=1e-14))
    assert got == pytest.approx(ref, abs=1e-8)


@pytest.mark.parametrize("alg,level", [("fn", 1), ("mf", 1), ("mf2", 1), ("fn2", 1.5), ("cp", 1.5)])
@pytest.mark.parametrize("t", [2.5, 4.5])
def test_fixed_points_match_grid_engine(alg, level, t):
    cfg = CriticalSearchConfig(init_m=0.9, fp_tolerance=1e-14)
    ref = spontaneous_magnetization(alg, t, cfg)
    model = grid_ferromagnet(t)
    b = _uniform(model, level, 0.95)
    step = {"fn": fn_step, "mf": mf_step, "mf2": mf2_step, "fn2": fn2_step, "cp": cp_step}[alg]
    for _ in range(3000):
        b = step(model, b)
    assert abs(_mag(b)) == pytest.approx(ref, abs=1e-8)


def test_mf_low_and_high_temperature():
    assert spontaneous_magnetization("mf", 5.0) < 1e-4
    root = brentq(lambda m: m - math.tanh(4 * m / 3), 0.1, 1.0, xtol=1e-14)
    assert spontaneous_magnetization("mf", 3.0) == pytest.approx(root, abs=1e-6)
    assert root == pytest.approx(0.7755, abs=1e-4)


def test_bp_magnetized_below_threshold():
    assert spontaneous_magnetization("bp", 2.5) > 1e-2
    assert spontaneous_magnetization("bp", 3.0) < 1e-4


def test_bp_linearized_tc():
    tc = bp_linearized_tc()
    assert math.tanh(1 / tc) == pytest.approx(1 / 3, abs=1e-15)
    assert tc == pytest.approx(2.88539, abs=1e-5)


@pytest.fixture(scope="module")
def table():
    return {a: tc for a, tc, _, _ in critical_table(ALGORITHMS)}


@pytest.mark.parametrize("alg,tol", [("mf", 0.005), ("bp", 0.005), ("fn", 0.01), ("fn2", 0.01),
                                     ("mf2", 0.01)])
def test_critical_temperatures(table, alg, tol):
    assert abs(table[alg] - REFERENCE_TC[alg]) <= tol


def test_critical_temperature_oracles(table):
    # MF: 4 / t = 1; MF2: 3 (1 + tanh(1/t)) / t = 1; BP: tanh(1/t) = 1/3
    assert table["mf"] == pytest.approx(4.0, abs=1e-3)
    mf2 = brentq(lambda t: 3 * (1 + math.tanh(1 / t)) / t - 1, 3, 5, xtol=1e-12)
    assert table["mf2"] == pytest.approx(mf2, abs=1e-3)
    assert table["bp"] == pytest.approx(bp_linearized_tc(), abs=1e-3)
    # CP is exact on the Bethe lattice and shares BP's transition
    assert table["cp"] == pytest.approx(bp_linearized_tc(), abs=1e-3)


def test_ordering(table):
    assert table["bp"] < table["fn2"] < table["fn"] < table["mf2"] < table["mf"]


@pytest.mark.parametrize("alg", ALGORITHMS)
def test_magnetization_monotone_in_t(alg):
    ts = np.linspace(1.8, 4.5, 20)
    ms = [spontaneous_magnetization(alg, t) for t in ts]
    assert all(a >= b - 1e-9 for a, b in zip(ms, ms[1:]))


def test_bad_bracket():
    with pytest.raises(BadBracketError):
        critical_temperature("mf", CriticalSearchConfig(t_low=4.5, t_high=6.0))
    with pytest.raises(BadBracketError):
        critical_temperature("bp", CriticalSearchConfig(t_low=1.5, t_high=2.0))


@pytest.mark.parametrize("kw", [dict(t_low=3, t_high=2), dict(t_tolerance=0), dict(init_m=0.0),
                                dict(max_fp_iterations=0)])
def test_search_config_validation(kw):
    with pytest.raises(InvalidConfigError):
        CriticalSearchConfig(**kw)


def test_input_validation():
    with pytest.raises(InvalidConfigError):
        homogeneous_step("gibbs", 2.0, 0.1)
    with pytest.raises(InvalidConfigError):
        spontaneous_magnetization("mf", -1.0)
    with pytest.raises(InvalidConfigError):
        HomogeneousState("mf", 1.5)


def test_driver_agrees_on_ferromagnet_fixed_point():
    # the general driver from uniform start stays at the symmetric point above t_c
    model = grid_ferromagnet(4.5)
    b, rep = run_to_convergence("fn", model, RunConfig(tolerance=1e-12))
    assert rep.converged and abs(_mag(b)) < 1e-10
