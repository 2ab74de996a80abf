"""Single-site Gibbs sampling and its exact transition kernels.

The site conditionals come from the model's compiled conditional tables,
which are built from the same region potentials as ``local_conditional``.
``ck_marginal_step`` calls the very routine the iterative algorithms use to
turn a neighborhood distribution into a region distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InvalidConfigError, ModelTooLargeError
from .exact import iter_configs, joint_table, state_space_size
from .inference import kernels as K
from .inference.beliefs import BeliefSet
from .model import PairwiseModel, Region, neighborhood

MAX_KERNEL_CONFIGS = 2**14


def check_config(model: PairwiseModel, config) -> np.ndarray:
    x = np.asarray(config)
    if x.shape != (model.node_count,):
        raise InvalidConfigError(f"configuration has {x.size} entries for {model.node_count} nodes")
    cards = np.asarray(model.cardinalities)
    if not np.issubdtype(x.dtype, np.integer):
        if not np.all(np.mod(x, 1) == 0):
            raise InvalidConfigError("configuration entries must be integers")
    x = x.astype(np.int64)
    bad = np.flatnonzero((x < 0) | (x >= cards))
    if bad.size:
        raise InvalidConfigError(f"state {x[bad[0]]} invalid for node {bad[0]}")
    return x


@njit(cache=True)
def _boundary_index(P, r, x):
    c = 0
    for q in range(P.reg_bptr[r], P.reg_bptr[r + 1]):
        k = P.reg_bnd[q]
        c = c * P.card[k] + x[k]
    return c


@njit(cache=True)
def _draw(P, i, x, u):
    """Inverse-CDF draw of x_i from P(x_i | x_N(i)) with uniform ``u``."""
    rs = P.reg_size[i]
    base = P.reg_coff[i] + _boundary_index(P, i, x) * rs
    acc = 0.0
    last = 0
    for s in range(rs):
        p = P.cond[base + s]
        if p > 0.0:
            last = s
            acc += p
            if u < acc:
                return s
    return last


@njit(cache=True)
def site_conditional(P, i, x):
    rs = P.reg_size[i]
    base = P.reg_coff[i] + _boundary_index(P, i, x) * rs
    return P.cond[base:base + rs].copy()


@njit(cache=True)
def _run_chain(P, x, u, order, burn_in, count_pairs):
    n = P.n
    sweeps = u.shape[0]
    counts = np.zeros(P.node_off[n])
    pcounts = np.zeros(P.edge_off[P.E] if count_pairs else 0)
    for t in range(sweeps):
        for q in range(n):
            i = order[t, q]
            x[i] = _draw(P, i, x, u[t, q])
        if t >= burn_in:
            for i in range(n):
                counts[P.node_off[i] + x[i]] += 1.0
            if count_pairs:
                for e in range(P.E):
                    cv = P.card[P.edge_v[e]]
                    pcounts[P.edge_off[e] + x[P.edge_u[e]] * cv + x[P.edge_v[e]]] += 1.0
    return counts, pcounts


def gibbs_site_update(model: PairwiseModel, config, site: int, u: float) -> np.ndarray:
    """Resample ``site`` from its conditional given the rest, using uniform ``u``."""
    x = check_config(model, config).copy()
    if not 0 <= site < model.node_count:
        raise InvalidConfigError(f"unknown site {site}")
    if not 0.0 <= u < 1.0:
        raise InvalidConfigError("u must lie in [0, 1)")
    x[site] = _draw(model.plan, site, x, float(u))
    return x


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """``matrix[a, b]`` = K(x_b | x_a) over configurations in row-major order."""

    site: int
    matrix: np.ndarray


def _check_kernel_size(model: PairwiseModel) -> int:
    size = state_space_size(model)
    if size > MAX_KERNEL_CONFIGS:
        raise ModelTooLargeError(f"{size} configurations exceed the kernel cap {MAX_KERNEL_CONFIGS}")
    return size


def explicit_kernel(model: PairwiseModel, site: int) -> KernelMatrix:
    size = _check_kernel_size(model)
    if not 0 <= site < model.node_count:
        raise InvalidConfigError(f"unknown site {site}")
    P = model.plan
    cards = model.cardinalities
    stride = math.prod(cards[site + 1:])
    M = np.zeros((size, size))
    a = 0
    for chunk in iter_configs(model):
        for x in chunk:
            p = site_conditional(P, site, x)
            src = a - x[site] * stride
            for s in range(cards[site]):
                M[a, src + s * stride] = p[s]
            a += 1
    return KernelMatrix(site, M)


def sweep_kernel(model: PairwiseModel, order=None) -> np.ndarray:
    """Transition matrix of one sweep: the product of site kernels in ``order``."""
    order = range(model.node_count) if order is None else order
    size = _check_kernel_size(model)
    M = np.eye(size)
    for i in order:
        M = M @ explicit_kernel(model, i).matrix
    return M


def _joint_vector(model: PairwiseModel) -> np.ndarray:
    return joint_table(model, MAX_KERNEL_CONFIGS).reshape(-1)


def detailed_balance_violation(kernel: KernelMatrix | np.ndarray, model: PairwiseModel) -> float:
    """max over pairs of |K(x | x') P(x') - K(x' | x) P(x)|."""
    M = kernel.matrix if isinstance(kernel, KernelMatrix) else np.asarray(kernel)
    p = _joint_vector(model)
    if M.shape != (p.size, p.size):
        raise InvalidConfigError(f"kernel shape {M.shape} does not match {p.size} configurations")
    flow = p[:, None] * M
    return float(np.max(np.abs(flow - flow.T)))


def stationarity_violation(kernel: KernelMatrix | np.ndarray, model: PairwiseModel) -> float:
    """|| K^T P - P ||_inf."""
    M = kernel.matrix if isinstance(kernel, KernelMatrix) else np.asarray(kernel)
    p = _joint_vector(model)
    return float(np.max(np.abs(M.T @ p - p)))


@njit(cache=True)
def _ck(P, r, w):
    out = np.empty(P.reg_size[r])
    tmp = np.empty(P.reg_size[r])
    status = K._apply_conditional(P, r, w, w.size, out, 0, tmp)
    return out, status


def ck_marginal_step(model: PairwiseModel, region: Region, nbr_table) -> np.ndarray:
    """sum_{x_N} P(x_R | x_N) mu(x_N) for a distribution ``mu`` over the sorted boundary."""
    nbr = neighborhood(model, region)
    shape = tuple(model.cardinalities[k] for k in nbr)
    w = np.ascontiguousarray(np.asarray(nbr_table, dtype=np.float64).reshape(-1))
    if w.size != math.prod(shape):
        raise InvalidConfigError(f"neighborhood table has {w.size} entries, expected {shape}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise InvalidConfigError("neighborhood table must be a probability table")
    n = model.node_count
    if len(region.nodes) == 1:
        r = region.nodes[0]
    else:
        r = n + model.topology.edge_id(*region.nodes)
    out, status = _ck(model.plan, r, w)
    if status != K.OK:
        from .inference.engine import raise_for_status

        raise_for_status(model, status, r, w)
    return out.reshape([model.cardinalities[a] for a in region.nodes])


@dataclass(frozen=True)
class ChainConfig:
    sweeps: int = 100_000
    burn_in: int | None = None
    chains: int = 8
    seed: int = 0
    sweep_order: str = "fixed"
    pairwise: bool = False

    def __post_init__(self):
        burn = self.sweeps // 10 if self.burn_in is None else int(self.burn_in)
        object.__setattr__(self, "burn_in", burn)
        if not self.sweeps > burn >= 0:
            raise InvalidConfigError("need sweeps > burn_in >= 0")
        if self.chains < 1:
            raise InvalidConfigError("need at least one chain")
        if self.sweep_order not in ("fixed", "random"):
            raise InvalidConfigError("sweep_order must be 'fixed' or 'random'")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidConfigError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class GibbsResult:
    beliefs: BeliefSet
    standard_errors: tuple[np.ndarray, ...]
    chain_means: np.ndarray
    config: ChainConfig

    def to_dict(self) -> dict:
        c = self.config
        return {
            "means": [b.tolist() for b in self.beliefs.singletons],
            "standard_errors": [s.tolist() for s in self.standard_errors],
            "seed": c.seed, "chains": c.chains, "sweeps": c.sweeps, "burn_in": c.burn_in,
            "sweep_order": c.sweep_order,
            "chain_seed_keys": [list(s.spawn_key) for s in chain_seeds(c)],
        }


def chain_seeds(cfg: ChainConfig):
    """Per-chain seed sequences: SeedSequence(seed).spawn(chains)."""
    return np.random.SeedSequence(int(cfg.seed)).spawn(cfg.chains)


def gibbs_estimate(model: PairwiseModel, cfg: ChainConfig | None = None) -> GibbsResult:
    """Pooled singleton (and optionally edge) frequencies after burn-in.

    Each chain starts from a uniformly random configuration drawn from its own
    PCG64 stream.  Standard errors are the standard deviation of the chain
    means (ddof 1) divided by sqrt(chains); they are NaN for a single chain.
    """
    cfg = cfg or ChainConfig()
    P = model.plan
    n = model.node_count
    cards = np.asarray(model.cardinalities)
    kept = cfg.sweeps - cfg.burn_in
    means, pmeans = [], []
    for ss in chain_seeds(cfg):
        rng = np.random.Generator(np.random.PCG64(ss))
        x = np.floor(rng.random(n) * cards).astype(np.int64)
        u = rng.random((cfg.sweeps, n))
        if cfg.sweep_order == "fixed":
            order = np.broadcast_to(np.arange(n, dtype=np.int64), (cfg.sweeps, n))
        else:
            order = np.argsort(rng.random((cfg.sweeps, n)), axis=1).astype(np.int64)
        counts, pcounts = _run_chain(P, x, u, np.ascontiguousarray(order), cfg.burn_in,
                                     cfg.pairwise)
        means.append(counts / kept)
        if cfg.pairwise:
            pmeans.append(pcounts / kept)
    means = np.array(means)
    pooled = means.mean(axis=0)
    if cfg.chains > 1:
        se = means.std(axis=0, ddof=1) / math.sqrt(cfg.chains)
    else:
        se = np.full(pooled.shape, np.nan)
    off = P.node_off
    singles = [pooled[off[i]:off[i + 1]] / pooled[off[i]:off[i + 1]].sum() for i in range(n)]
    errs = tuple(se[off[i]:off[i + 1]] for i in range(n))
    if cfg.pairwise:
        pp = np.mean(pmeans, axis=0)
        eo = P.edge_off
        pairs = [pp[eo[e]:eo[e + 1]].reshape(cards[u], cards[v])
                 for e, (u, v) in enumerate(model.topology.edges)]
        beliefs = BeliefSet(model.topology, model.cardinalities, 2, singles, pairs)
    else:
        beliefs = BeliefSet(model.topology, model.cardinalities, 1, singles)
    return GibbsResult(beliefs, errs, means, cfg)
