"""Critical temperatures of the homogeneous ferromagnet on the degree-4 grid.

Spins are s = +-1 with P(s) proportional to exp(sum_<ij> s_i s_j / t).  Every
algorithm is specialized to the infinite grid with all beliefs equal, which
turns its update into a map on the magnetization m = E[s] (plus, for CP, a
symmetric 2x2 pair table).  The {0, 1} parameters of the same model are
theta = 4 / t on every edge and phi = -8 / t on every node
(see ``model.ising_from_spins``).

    fn   m' = sum_k C(4, k) p^k q^(4-k) tanh((2k - 4) / t), p = (1 + m) / 2
    mf   m' = tanh(4 m / t)
    bp   cavity message p' from three identical incoming messages
    fn2  edge update with the six boundary spins drawn independently
    mf2  pair distribution of an edge with outside neighbors at their mean
    cp   edge update with a Bethe boundary built from the pair table
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import BadBracketError, InvalidConfigError, OscillationError

ALGORITHMS = ("mf", "mf2", "fn", "fn2", "bp", "cp")
DEFAULT_ALGORITHMS = ("bp", "fn2", "fn", "mf2", "mf")
CODE = {"fn": 0, "fn2": 1, "cp": 2, "bp": 3, "mf": 4, "mf2": 5}
REFERENCE_TC = {"mf": 4.0, "bp": 2.885, "fn": 3.089, "fn2": 3.025, "mf2": 3.776}
ONSAGER_TC = 2.0 / math.log(1.0 + math.sqrt(2.0))


@njit(cache=True)
def _binom(n, k):
    r = 1.0
    for a in range(k):
        r = r * (n - a) / (a + 1)
    return r


@njit(cache=True)
def _fn(t, m):
    p = 0.5 * (1.0 + m)
    q = 0.5 * (1.0 - m)
    out = 0.0
    for k in range(5):
        out += _binom(4, k) * p**k * q**(4 - k) * math.tanh((2 * k - 4) / t)
    return out


@njit(cache=True)
def _pair_mean(t, a, b):
    """E[(s_i + s_j) / 2 | boundary] with a (b) of the 3 outside neighbors of i (j) up."""
    hi = (2 * a - 3) / t
    hj = (2 * b - 3) / t
    z = 0.0
    s = 0.0
    for si in (-1.0, 1.0):
        for sj in (-1.0, 1.0):
            w = math.exp(si * sj / t + si * hi + sj * hj - (abs(hi) + abs(hj) + 1.0 / t))
            z += w
            s += w * 0.5 * (si + sj)
    return s / z


@njit(cache=True)
def _fn2(t, m):
    p = 0.5 * (1.0 + m)
    q = 0.5 * (1.0 - m)
    out = 0.0
    for a in range(4):
        pa = _binom(3, a) * p**a * q**(3 - a)
        for b in range(4):
            pb = _binom(3, b) * p**b * q**(3 - b)
            out += pa * pb * _pair_mean(t, a, b)
    return out


@njit(cache=True)
def _mf2(t, m):
    th = 4.0 / t
    phi = -8.0 / t
    bt = 0.5 * (1.0 + m)
    h = phi + 3.0 * th * bt
    e10 = h
    e11 = 2.0 * h + th
    mx = max(0.0, e10, e11)
    z00 = math.exp(-mx)
    z10 = math.exp(e10 - mx)
    z11 = math.exp(e11 - mx)
    p1 = (z10 + z11) / (z00 + 2.0 * z10 + z11)
    return 2.0 * p1 - 1.0


@njit(cache=True)
def _bp_message(t, p):
    q = 1.0 - p
    a = math.exp(1.0 / t)
    c = math.exp(-1.0 / t)
    up = a * p**3 + c * q**3
    dn = c * p**3 + a * q**3
    return up / (up + dn)


@njit(cache=True)
def _bp_mag(p):
    q = 1.0 - p
    return (p**4 - q**4) / (p**4 + q**4)


@njit(cache=True)
def _bp_init(m):
    if m >= 1.0:
        return 1.0
    if m <= -1.0:
        return 0.0
    r = ((1.0 + m) / (1.0 - m)) ** 0.25
    return r / (1.0 + r)


@njit(cache=True)
def _cp_step(t, T):
    """T is the symmetric pair table [[--, -+], [+-, ++]]."""
    d0 = T[0, 0] + T[0, 1]
    d1 = T[1, 0] + T[1, 1]
    f = np.empty((2, 2))
    f[0, 0] = T[0, 0] / d0
    f[0, 1] = T[0, 1] / d0
    f[1, 0] = T[1, 0] / d1
    f[1, 1] = T[1, 1] / d1
    out = np.zeros((2, 2))
    for a in range(4):
        for b in range(4):
            nb = 0.0
            for si in range(2):
                for sj in range(2):
                    nb += (T[si, sj] * f[si, 1]**a * f[si, 0]**(3 - a)
                           * f[sj, 1]**b * f[sj, 0]**(3 - b))
            w = _binom(3, a) * _binom(3, b) * nb
            hi = (2 * a - 3) / t
            hj = (2 * b - 3) / t
            z = 0.0
            cond = np.empty((2, 2))
            for si in range(2):
                for sj in range(2):
                    xi = 2.0 * si - 1.0
                    xj = 2.0 * sj - 1.0
                    c = math.exp(xi * xj / t + xi * hi + xj * hj - (abs(hi) + abs(hj) + 1.0 / t))
                    cond[si, sj] = c
                    z += c
            for si in range(2):
                for sj in range(2):
                    out[si, sj] += w * cond[si, sj] / z
    return out / out.sum()


@njit(cache=True)
def _cp_init(m):
    p = 0.5 * (1.0 + m)
    T = np.empty((2, 2))
    T[1, 1] = p * p
    T[1, 0] = p * (1.0 - p)
    T[0, 1] = p * (1.0 - p)
    T[0, 0] = (1.0 - p) ** 2
    return T


@njit(cache=True)
def _cp_mag(T):
    return T[1, 0] + T[1, 1] - T[0, 0] - T[0, 1]


@njit(cache=True)
def _scalar_step(code, t, x):
    if code == 0:
        return _fn(t, x)
    if code == 1:
        return _fn2(t, x)
    if code == 3:
        return _bp_message(t, x)
    if code == 4:
        return math.tanh(4.0 * x / t)
    return _mf2(t, x)


@njit(cache=True)
def _iterate(code, t, m0, tol, max_iter):
    """Iterate from magnetization m0; returns (m, steps, converged, lo, hi, sign_changes).

    ``lo``/``hi`` bound m over the last 100 steps; ``sign_changes`` counts
    reversals of the step direction over the same window.
    """
    if code == 3:
        x = _bp_init(m0)
    else:
        x = m0
    T = _cp_init(m0)
    m = m0
    lo = m0
    hi = m0
    prev_d = 0.0
    flips = 0
    for it in range(1, max_iter + 1):
        if code == 2:
            T = _cp_step(t, T)
            mn = _cp_mag(T)
        else:
            x = _scalar_step(code, t, x)
            mn = _bp_mag(x) if code == 3 else x
        d = mn - m
        if it > max_iter - 100:
            lo = min(lo, mn)
            hi = max(hi, mn)
            if d * prev_d < 0.0:
                flips += 1
        prev_d = d
        m = mn
        if abs(d) < tol:
            return m, it, True, m, m, 0
    return m, max_iter, False, lo, hi, flips


@dataclass(frozen=True)
class HomogeneousState:
    algorithm: str
    m: float
    pair: np.ndarray | None = None

    def __post_init__(self):
        if not -1.0 <= self.m <= 1.0:
            raise InvalidConfigError(f"magnetization {self.m} outside [-1, 1]")


@dataclass(frozen=True)
class CriticalSearchConfig:
    t_low: float = 1.5
    t_high: float = 5.0
    t_tolerance: float = 1e-3
    m_threshold: float = 1e-4
    init_m: float = 0.9
    max_fp_iterations: int = 100_000
    fp_tolerance: float = 1e-10

    def __post_init__(self):
        if not 0 < self.t_low < self.t_high:
            raise InvalidConfigError("need 0 < t_low < t_high")
        if not (self.t_tolerance > 0 and self.m_threshold > 0 and self.fp_tolerance > 0):
            raise InvalidConfigError("tolerances must be positive")
        if not 0 < abs(self.init_m) <= 1:
            raise InvalidConfigError("init_m must be nonzero and within [-1, 1]")
        if self.max_fp_iterations < 1:
            raise InvalidConfigError("max_fp_iterations must be positive")


def _check(algorithm: str) -> str:
    a = str(algorithm).lower()
    if a not in CODE:
        raise InvalidConfigError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    return a


def _check_t(t: float) -> float:
    t = float(t)
    if not t > 0:
        raise InvalidConfigError(f"temperature must be positive, got {t}")
    return t


def homogeneous_step(algorithm: str, t: float, state) -> HomogeneousState:
    """One update of ``algorithm`` on the homogeneous grid; ``state`` may be a float m."""
    a = _check(algorithm)
    t = _check_t(t)
    if not isinstance(state, HomogeneousState):
        state = HomogeneousState(a, float(state))
    if a == "cp":
        T = state.pair if state.pair is not None else _cp_init(state.m)
        T = _cp_step(t, np.asarray(T, dtype=float))
        return HomogeneousState(a, float(_cp_mag(T)), T)
    if a == "bp":
        p = _bp_message(t, _bp_init(state.m))
        return HomogeneousState(a, float(_bp_mag(p)))
    m = float(_scalar_step(CODE[a], t, state.m))
    if a in ("fn2", "mf2"):
        p = 0.5 * (1.0 + m)
        return HomogeneousState(a, m, np.outer([1 - p, p], [1 - p, p]))
    return HomogeneousState(a, m)


def spontaneous_magnetization(algorithm: str, t: float,
                              cfg: CriticalSearchConfig | None = None) -> float:
    """|m| at the fixed point reached from ``cfg.init_m``.

    Iterates until successive magnetizations differ by less than
    ``cfg.fp_tolerance``.  If the iteration budget runs out while m still
    moves monotonically (slow relaxation near t_c) the last |m| is returned;
    if it is oscillating an OscillationError carries the last band.
    """
    cfg = cfg or CriticalSearchConfig()
    a = _check(algorithm)
    t = _check_t(t)
    m, _, ok, lo, hi, flips = _iterate(CODE[a], t, float(cfg.init_m), float(cfg.fp_tolerance),
                                       int(cfg.max_fp_iterations))
    if not ok and flips > 10:
        raise OscillationError(f"{a} at t={t} oscillates in [{lo:.6g}, {hi:.6g}]", (lo, hi))
    return abs(float(m))


def critical_temperature(algorithm: str, cfg: CriticalSearchConfig | None = None) -> float:
    """Bisection on t for the predicate spontaneous_magnetization > m_threshold."""
    cfg = cfg or CriticalSearchConfig()
    a = _check(algorithm)

    def magnetized(t):
        return spontaneous_magnetization(a, t, cfg) > cfg.m_threshold

    lo, hi = float(cfg.t_low), float(cfg.t_high)
    if not magnetized(lo):
        raise BadBracketError(f"{a} is not magnetized at t_low={lo}")
    if magnetized(hi):
        raise BadBracketError(f"{a} is still magnetized at t_high={hi}")
    while hi - lo > cfg.t_tolerance:
        mid = 0.5 * (lo + hi)
        if magnetized(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bp_linearized_tc() -> float:
    """Closed form from linearizing the cavity map at m = 0: tanh(1/t) = 1/3."""
    return 1.0 / math.atanh(1.0 / 3.0)


def critical_table(algorithms=DEFAULT_ALGORITHMS, cfg: CriticalSearchConfig | None = None):
    """Rows (algorithm, t_c, reference value or None, t_c - reference)."""
    rows = []
    for a in algorithms:
        tc = critical_temperature(a, cfg)
        ref = REFERENCE_TC.get(a)
        rows.append((a, tc, ref, None if ref is None else tc - ref))
    return rows
