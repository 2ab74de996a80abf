"""Neighborhood distributions, map images and fixed-point diagnostics.

Everything here is plain numpy built on ``conditional_table`` and the belief
tables.  It does not share code with the compiled kernels, so comparing the
two is a meaningful check of either.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import (
    InvalidConfigError,
    LogOfZeroError,
    ModelTooLargeError,
    PreconditionError,
    UnsupportedModelError,
)
from ..exact import iter_configs, log_weights
from ..model import PairwiseModel, Region, conditional_table, neighborhood
from .beliefs import BeliefSet
from .engine import LEVEL, check_algorithm

CONSTRUCTIONS = ("fn", "fn2", "cp", "bp", "mf", "mf2")
DEFAULT_CONSTRUCTION = {1: "fn", 1.5: "fn2", 2: "bp"}


@dataclass(frozen=True)
class BetheEmbedding:
    """Joint table over ``nodes`` (region nodes first, then the sorted boundary)."""

    nodes: tuple[int, ...]
    table: np.ndarray
    z: float
    clamp_count: int


@dataclass(frozen=True, eq=False)
class WsklWeights:
    alpha_singleton: np.ndarray
    alpha_pair: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha_singleton, dtype=float).reshape(-1)
        b = np.asarray(self.alpha_pair, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InvalidConfigError("WSKL weights must be finite")
        object.__setattr__(self, "alpha_singleton", a)
        object.__setattr__(self, "alpha_pair", b)

    @classmethod
    def singletons(cls, model: PairwiseModel) -> "WsklWeights":
        """Weight 1 on every singleton region and 0 on edges."""
        return cls(np.ones(model.node_count), np.zeros(len(model.topology.edges)))

    @classmethod
    def matching(cls, model: PairwiseModel, level) -> "WsklWeights":
        """Weight 1 on every table the given level represents."""
        n, E = model.node_count, len(model.topology.edges)
        return cls(np.ones(n) if level in (1, 2) else np.zeros(n),
                   np.ones(E) if level in (1.5, 2) else np.zeros(E))


def _construction(beliefs: BeliefSet, construction) -> str:
    if construction is None:
        return DEFAULT_CONSTRUCTION[beliefs.level]
    c = check_algorithm(construction)
    c = "bp" if c == "bp_dlr" else c
    if LEVEL[c] != beliefs.level:
        raise InvalidConfigError(f"{c} works on level-{LEVEL[c]} beliefs, got level {beliefs.level}")
    return c


def _link_factor(beliefs: BeliefSet, r: int, k: int, clamp: float,
                 from_pairs: bool):
    """b_rk(x_r, x_k) / D(x_r), with D the singleton or the link's own x_r marginal."""
    t = beliefs.pair(r, k)
    if from_pairs:
        d = t.sum(axis=1)
    else:
        d = beliefs.singletons[r]
    low = d < clamp
    return t / np.where(low, clamp, d)[:, None], int(low.sum())


def bethe_embedding(beliefs: BeliefSet, region: Region, clamp: float = 1e-12,
                    from_pairs: bool | None = None) -> BetheEmbedding:
    """Tree-shaped joint over a region and its boundary.

    For a node i: B ∝ b_i(x_i) prod_k b_ik(x_i, x_k) / b_i(x_i).  For an edge
    (i, j): B ∝ b_ij(x_i, x_j) times the same factors for every other
    neighbor of i and of j.  A boundary node k adjacent to both i and j is
    also divided by b_k(x_k), so that B is the Bethe factorization of the
    star around the region.  With ``from_pairs`` (the default for level-1.5
    beliefs, edge regions only) each link b_rk is divided by its own x_r
    marginal, and b_k is the mean of the x_k marginals of the links into k.  The
    normalizer is always computed.
    """
    if beliefs.pair_tables is None:
        raise InvalidConfigError("a Bethe embedding needs edge tables")
    if from_pairs is None:
        from_pairs = beliefs.level == 1.5
    top = beliefs.topology
    nbr = neighborhood(top, region)
    nodes = region.nodes + nbr
    pos = {a: p for p, a in enumerate(nodes)}
    cards = [beliefs.cardinalities[a] for a in nodes]
    nd = len(nodes)

    def shaped(t, axes):
        shape = [1] * nd
        for a in axes:
            shape[pos[a]] = cards[pos[a]]
        return t.reshape(shape)

    if len(region.nodes) == 1:
        if from_pairs:
            raise InvalidConfigError("singleton embeddings need singleton tables")
        table = shaped(beliefs.singletons[region.nodes[0]], region.nodes)
    else:
        table = shaped(beliefs.pair(*region.nodes), region.nodes)
    table = np.broadcast_to(table, cards).copy()
    clamps = 0
    links: dict[int, list[int]] = {}
    for r in region.nodes:
        for k in top.adjacency[r]:
            if k in region.nodes:
                continue
            f, c = _link_factor(beliefs, r, k, clamp, from_pairs)
            clamps += c
            table *= shaped(f, (r, k))
            links.setdefault(k, []).append(r)
    for k, rs in links.items():
        if len(rs) < 2:
            continue
        if from_pairs:
            d = np.mean([beliefs.pair(r, k).sum(axis=0) for r in rs], axis=0)
        else:
            d = beliefs.singletons[k]
        low = d < clamp
        clamps += int(low.sum())
        table /= shaped(np.where(low, clamp, d) ** (len(rs) - 1), (k,))
    z = float(table.sum())
    if not z > 0:
        raise PreconditionError(f"Bethe embedding of {region.nodes} has zero mass")
    return BetheEmbedding(nodes, table / z, z, clamps)


def product_neighborhood(singletons, nodes) -> np.ndarray:
    """prod_k b_k(x_k) over ``nodes`` as a tensor in that axis order."""
    t = np.ones(())
    for k in nodes:
        t = np.multiply.outer(t, singletons[k])
    return t


def neighborhood_distribution(beliefs: BeliefSet, region: Region, construction,
                              clamp: float = 1e-12) -> np.ndarray:
    """B(x_N(R)) as a tensor over the sorted boundary of ``region``."""
    c = _construction(beliefs, construction)
    if c in ("fn", "fn2", "mf", "mf2"):
        return product_neighborhood(beliefs.singletons, neighborhood(beliefs.topology, region))
    emb = bethe_embedding(beliefs, region, clamp, from_pairs=(c == "cp"))
    return emb.table.sum(axis=tuple(range(len(region.nodes))))


def region_rhs(model: PairwiseModel, region: Region, nbr_table: np.ndarray) -> np.ndarray:
    """sum_{x_N} P(x_R | x_N) B(x_N), as a table over the region's axes."""
    nbr, cond = conditional_table(model, region)
    out = np.asarray(nbr_table, dtype=float).reshape(-1) @ cond
    return (out / out.sum()).reshape([model.cardinalities[a] for a in region.nodes])


def _mf_image(model, beliefs):
    out = []
    for i in range(model.node_count):
        region = Region.of(i)
        nbr, cond = conditional_table(model, region)
        w = product_neighborhood(beliefs.singletons, nbr).reshape(-1)
        live = w > 0
        with np.errstate(divide="ignore"):
            lc = np.log(cond[live])
        if np.any(np.isneginf(lc)):
            raise LogOfZeroError(f"log(0) with nonzero weight at node {i}")
        e = w[live] @ lc
        p = np.exp(e - e.max())
        out.append(p / p.sum())
    return out


def _mf2_image(model, beliefs):
    if model.ising is None or not model.is_binary:
        raise UnsupportedModelError("mf2 requires a binary Ising model")
    top = model.topology
    th, phi = model.ising.theta, model.ising.phi
    m = np.array([b[1] for b in beliefs.singletons])
    out = []
    for i in range(model.node_count):
        nb = top.adjacency[i]
        if not nb:
            p1 = 1.0 / (1.0 + np.exp(-phi[i]))
        else:
            acc = 0.0
            for k in nb:
                hi = sum(th[top.edge_id(i, j)] * m[j] for j in nb if j != k)
                hk = sum(th[top.edge_id(k, j)] * m[j] for j in top.adjacency[k] if j != i)
                e = np.array([[0.0, phi[k] + hk],
                              [phi[i] + hi, phi[i] + hi + phi[k] + hk + th[top.edge_id(i, k)]]])
                p = np.exp(e - e.max())
                acc += p[1].sum() / p.sum()
            p1 = acc / len(nb)
        out.append(np.array([1.0 - p1, p1]))
    return out


def map_image(model: PairwiseModel, beliefs: BeliefSet, construction=None,
              clamp: float = 1e-12) -> BeliefSet:
    """The beliefs one parallel update of ``construction`` would produce."""
    c = _construction(beliefs, construction)
    top = model.topology
    singles = pairs = None
    if c == "mf":
        singles = _mf_image(model, beliefs)
    elif c == "mf2":
        singles = _mf2_image(model, beliefs)
    else:
        if beliefs.level in (1, 2):
            singles = [region_rhs(model, Region.of(i),
                                  neighborhood_distribution(beliefs, Region.of(i), c, clamp))
                       for i in range(model.node_count)]
        if beliefs.level in (1.5, 2):
            pairs = [region_rhs(model, Region.of(u, v),
                                neighborhood_distribution(beliefs, Region.of(u, v), c, clamp))
                     for u, v in top.edges]
    return BeliefSet(top, model.cardinalities, beliefs.level, singles, pairs)


def _tables(beliefs: BeliefSet):
    singles = beliefs.singletons
    pairs = beliefs.pair_tables or ()
    return singles, pairs


def dlr_residual(model: PairwiseModel, beliefs: BeliefSet, construction=None,
                 clamp: float = 1e-12) -> float:
    """Largest |b_R - sum P(x_R | x_N) B(x_N)| over the represented tables.

    ``construction`` picks B: product of singletons (fn, fn2) or a Bethe
    embedding (cp, bp); it defaults to fn / fn2 / bp for levels 1 / 1.5 / 2.
    """
    img = map_image(model, beliefs, construction, clamp)
    diffs = [0.0]
    if beliefs.level in (1, 2):
        diffs += [np.max(np.abs(a - b)) for a, b in zip(beliefs.singletons, img.singletons)]
    if beliefs.level in (1.5, 2):
        diffs += [np.max(np.abs(a - b)) for a, b in zip(beliefs.pair_tables, img.pair_tables)]
    return float(max(diffs))


def kl(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    live = p > 0
    if np.any(q[live] <= 0):
        raise PreconditionError("KL divergence with a zero denominator")
    return float(np.sum(p[live] * np.log(p[live] / q[live])))


def wskl(model: PairwiseModel, beliefs: BeliefSet, weights: WsklWeights | None = None,
         construction=None, clamp: float = 1e-12) -> float:
    """sum_R alpha_R KL(b_R || sum P(x_R | x_N) B(x_N)).

    Defaults to weight 1 on singletons.  At level 1.5 singleton terms compare
    the derived singletons of the beliefs and of their image.
    """
    weights = weights or WsklWeights.singletons(model)
    img = map_image(model, beliefs, construction, clamp)
    total = 0.0
    bs, bp = _tables(beliefs)
    qs, qp = _tables(img)
    for a, p, q in zip(weights.alpha_singleton, bs, qs):
        if a != 0:
            total += a * kl(p, q)
    if beliefs.level in (1.5, 2):
        for a, p, q in zip(weights.alpha_pair, bp, qp):
            if a != 0:
                total += a * kl(p, q)
    return total


def consistency_gap(beliefs: BeliefSet) -> float:
    """Largest mismatch between edge-table marginals and singleton tables."""
    if beliefs.level != 2:
        raise InvalidConfigError("consistency needs level-2 beliefs")
    gap = 0.0
    for t, (u, v) in zip(beliefs.pair_tables, beliefs.topology.edges):
        gap = max(gap, np.max(np.abs(t.sum(axis=1) - beliefs.singletons[u])),
                  np.max(np.abs(t.sum(axis=0) - beliefs.singletons[v])))
    return float(gap)


def _xlogy_ratio(b: np.ndarray, log_psi: np.ndarray) -> float:
    live = b > 0
    if np.any(np.isneginf(log_psi[live])):
        return np.inf
    return float(np.sum(b[live] * (np.log(b[live]) - log_psi[live])))


def bethe_free_energy(model: PairwiseModel, beliefs: BeliefSet, tol: float = 1e-6) -> float:
    """sum_ij sum b_ij log(b_ij / (Psi_i Psi_j Psi_ij)) - sum_i (n_i - 1) sum b_i log(b_i / Psi_i)."""
    if consistency_gap(beliefs) > tol:
        raise PreconditionError("edge tables do not marginalize to the singleton tables")
    top = model.topology
    lu = model.log_unary
    f = 0.0
    for e, ((u, v), t) in enumerate(zip(top.edges, beliefs.pair_tables)):
        lp = model.log_pairwise[e] + lu[u][:, None] + lu[v][None, :]
        f += _xlogy_ratio(t, lp)
    for i in range(model.node_count):
        f -= (top.degree(i) - 1) * _xlogy_ratio(beliefs.singletons[i], lu[i])
    return f


def reparameterization_spread(model: PairwiseModel, beliefs: BeliefSet,
                              clamp: float = 1e-12, max_nodes: int = 14) -> float:
    """max/min over all x of [prod b_ij / prod b_i^(n_i - 1)] / P(x), minus 1."""
    if beliefs.level != 2:
        raise InvalidConfigError("the check needs level-2 beliefs")
    if model.node_count > max_nodes:
        raise ModelTooLargeError(f"{model.node_count} nodes exceed the limit of {max_nodes}")
    top = model.topology
    ls = [np.log(np.maximum(b, clamp)) for b in beliefs.singletons]
    lp = [np.log(np.maximum(t, clamp)) for t in beliefs.pair_tables]
    lo, hi = np.inf, -np.inf
    for x in iter_configs(model):
        r = -log_weights(model, x)
        for (u, v), t in zip(top.edges, lp):
            r += t[x[:, u], x[:, v]]
        for i in range(model.node_count):
            r -= (top.degree(i) - 1) * ls[i][x[:, i]]
        finite = r[np.isfinite(r)]
        if finite.size:
            lo = min(lo, float(finite.min()))
            hi = max(hi, float(finite.max()))
    return float(np.expm1(hi - lo))
