"""Pairwise discrete Markov random fields, Ising builders and instance generation.

States are integer indices ``0 .. card-1``.  For Ising models the two states
are the values ``x = 0`` and ``x = 1`` of

    P(x) = exp(sum_ij theta_ij x_i x_j + sum_i phi_i x_i) / Z.

Potentials are stored in the linear domain.  Every conditional is computed
in the log domain with a max-subtraction, and Ising-built models keep their
exact energies so that large couplings never pass through ``exp``/``log``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateConditionalError,
    InvalidConfigError,
    InvalidDimensionError,
    InvalidModelError,
    InvalidParameterError,
    InvalidRegionError,
    ModelFormatError,
)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Topology:
    """Undirected simple graph on nodes ``0 .. node_count-1``.

    Edges are stored as ``(u, v)`` with ``u < v`` in sorted order; the edge
    index used everywhere else in the package is the position in ``edges``.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    adjacency: tuple[tuple[int, ...], ...] = field(repr=False)

    @classmethod
    def from_edges(cls, node_count: int, edges: Sequence[Sequence[int]]) -> "Topology":
        node_count = int(node_count)
        if node_count < 1:
            raise InvalidModelError(f"node_count must be positive, got {node_count}")
        seen = set()
        norm = []
        for k, e in enumerate(edges):
            if len(e) != 2:
                raise InvalidModelError(f"edges[{k}]: expected a node pair, got {e!r}")
            u, v = int(e[0]), int(e[1])
            if not (0 <= u < node_count and 0 <= v < node_count):
                raise InvalidModelError(f"edges[{k}]: node index out of range in {(u, v)}")
            if u == v:
                raise InvalidModelError(f"edges[{k}]: self-loop on node {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise InvalidModelError(f"edges[{k}]: duplicate edge {key}")
            seen.add(key)
            norm.append(key)
        norm.sort()
        adj: list[list[int]] = [[] for _ in range(node_count)]
        for u, v in norm:
            adj[u].append(v)
            adj[v].append(u)
        return cls(node_count, tuple(norm), tuple(tuple(sorted(a)) for a in adj))

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {e: k for k, e in enumerate(self.edges)}

    def edge_id(self, u: int, v: int) -> int:
        try:
            return self.edge_index[(min(u, v), max(u, v))]
        except KeyError:
            raise InvalidRegionError(f"({u}, {v}) is not an edge") from None

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def is_tree(self) -> bool:
        if len(self.edges) != self.node_count - 1:
            return False
        seen = {0}
        stack = [0]
        while stack:
            for j in self.adjacency[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.node_count


def torus_grid(rows: int, cols: int) -> Topology:
    """Periodic ``rows x cols`` lattice; node ``(r, c)`` has id ``r * cols + c``."""
    if rows < 3 or cols < 3:
        raise InvalidDimensionError(f"torus needs rows, cols >= 3, got ({rows}, {cols})")
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            edges.append((i, r * cols + (c + 1) % cols))
            edges.append((i, ((r + 1) % rows) * cols + c))
    return Topology.from_edges(rows * cols, edges)


@dataclass(frozen=True, eq=False)
class IsingParams:
    topology: Topology
    theta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        theta = _frozen(self.theta).reshape(-1)
        phi = _frozen(self.phi).reshape(-1)
        if theta.shape != (len(self.topology.edges),):
            raise InvalidParameterError(
                f"theta has {theta.size} entries for {len(self.topology.edges)} edges")
        if phi.shape != (self.topology.node_count,):
            raise InvalidParameterError(
                f"phi has {phi.size} entries for {self.topology.node_count} nodes")
        bad = np.flatnonzero(~np.isfinite(theta))
        if bad.size:
            raise InvalidParameterError(f"theta[{bad[0]}] is not finite")
        bad = np.flatnonzero(~np.isfinite(phi))
        if bad.size:
            raise InvalidParameterError(f"phi[{bad[0]}] is not finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)


@dataclass(frozen=True, eq=False)
class PairwiseModel:
    """P(x) proportional to prod_i unary[i][x_i] * prod_e pairwise[e][x_u, x_v].

    ``pairwise[e]`` is indexed ``[x_u, x_v]`` for ``topology.edges[e] == (u, v)``.
    """

    topology: Topology
    cardinalities: tuple[int, ...]
    unary: tuple[np.ndarray, ...]
    pairwise: tuple[np.ndarray, ...]
    ising: IsingParams | None = None

    def __post_init__(self):
        top = self.topology
        cards = tuple(int(c) for c in self.cardinalities)
        if len(cards) != top.node_count:
            raise InvalidModelError(
                f"{len(cards)} cardinalities for {top.node_count} nodes")
        for i, c in enumerate(cards):
            if c < 2:
                raise InvalidModelError(f"nodes[{i}]: cardinality must be >= 2, got {c}")
        if len(self.unary) != top.node_count:
            raise InvalidModelError(f"{len(self.unary)} unary tables for {top.node_count} nodes")
        if len(self.pairwise) != len(top.edges):
            raise InvalidModelError(
                f"{len(self.pairwise)} pairwise tables for {len(top.edges)} edges")
        unary = tuple(_frozen(t) for t in self.unary)
        pairwise = tuple(_frozen(t) for t in self.pairwise)
        for i, t in enumerate(unary):
            where = f"unary[{i}]"
            if t.shape != (cards[i],):
                raise InvalidModelError(f"{where}: shape {t.shape}, expected ({cards[i]},)")
            _check_table(t, where)
        for e, t in enumerate(pairwise):
            u, v = top.edges[e]
            where = f"pairwise[{e}] (edge {u}-{v})"
            if t.shape != (cards[u], cards[v]):
                raise InvalidModelError(
                    f"{where}: shape {t.shape}, expected ({cards[u]}, {cards[v]})")
            _check_table(t, where)
        object.__setattr__(self, "cardinalities", cards)
        object.__setattr__(self, "unary", unary)
        object.__setattr__(self, "pairwise", pairwise)

    @property
    def node_count(self) -> int:
        return self.topology.node_count

    @property
    def is_binary(self) -> bool:
        return all(c == 2 for c in self.cardinalities)

    @cached_property
    def log_unary(self) -> tuple[np.ndarray, ...]:
        if self.ising is not None:
            return tuple(np.array([0.0, p]) for p in self.ising.phi)
        with np.errstate(divide="ignore"):
            return tuple(np.log(t) for t in self.unary)

    @cached_property
    def log_pairwise(self) -> tuple[np.ndarray, ...]:
        if self.ising is not None:
            return tuple(np.array([[0.0, 0.0], [0.0, th]]) for th in self.ising.theta)
        with np.errstate(divide="ignore"):
            return tuple(np.log(t) for t in self.pairwise)

    def pair_log_table(self, i: int, j: int) -> np.ndarray:
        """log Psi_ij oriented as ``[x_i, x_j]``."""
        t = self.log_pairwise[self.topology.edge_id(i, j)]
        return t if i < j else t.T

    @cached_property
    def plan(self):
        from .inference.plan import build_plan

        return build_plan(self)


def _check_table(t: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(t)):
        raise InvalidModelError(f"{where}: non-finite entry")
    if np.any(t < 0):
        raise InvalidModelError(f"{where}: negative entry")
    if not np.any(t > 0):
        raise InvalidModelError(f"{where}: no strictly positive entry")


def build_ising(params: IsingParams) -> PairwiseModel:
    top = params.topology
    unary = [np.exp(np.array([0.0, p])) for p in params.phi]
    pairwise = [np.exp(np.array([[0.0, 0.0], [0.0, th]])) for th in params.theta]
    for e, t in enumerate(pairwise):
        if not np.all(np.isfinite(t)):
            raise InvalidParameterError(f"theta[{e}]={params.theta[e]} overflows exp")
    return PairwiseModel(top, (2,) * top.node_count, tuple(unary), tuple(pairwise), ising=params)


def ising_from_spins(topology: Topology, coupling, field=0.0) -> IsingParams:
    """Map the +-1 model exp(sum J_ij s_i s_j + sum h_i s_i) onto x in {0, 1}.

    With s = 2x - 1 this gives theta_ij = 4 J_ij and
    phi_i = 2 h_i - 2 sum_{j in N(i)} J_ij (up to a constant).
    """
    J = np.broadcast_to(np.asarray(coupling, dtype=float), (len(topology.edges),))
    h = np.broadcast_to(np.asarray(field, dtype=float), (topology.node_count,))
    phi = 2.0 * h.copy()
    for (u, v), j in zip(topology.edges, J):
        phi[u] -= 2.0 * j
        phi[v] -= 2.0 * j
    return IsingParams(topology, 4.0 * J, phi)


@dataclass(frozen=True)
class Region:
    """A singleton ``(i,)`` or an edge ``(i, j)`` with ``i < j``."""

    nodes: tuple[int, ...]

    def __post_init__(self):
        nodes = tuple(sorted(int(n) for n in self.nodes))
        if len(nodes) not in (1, 2) or len(set(nodes)) != len(nodes):
            raise InvalidRegionError(f"region must be 1 or 2 distinct nodes, got {self.nodes}")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def of(cls, *nodes: int) -> "Region":
        return cls(tuple(nodes))

    def __len__(self) -> int:
        return len(self.nodes)


def _check_region(top: Topology, region: Region) -> None:
    for n in region.nodes:
        if not 0 <= n < top.node_count:
            raise InvalidRegionError(f"unknown node {n}")
    if len(region.nodes) == 2 and region.nodes not in top.edge_index:
        raise InvalidRegionError(f"{region.nodes} is not an edge of the topology")


def neighborhood(model, region: Region) -> tuple[int, ...]:
    """Markov blanket of ``region``: sorted union of adjacencies minus the region."""
    top = model.topology if isinstance(model, PairwiseModel) else model
    _check_region(top, region)
    out = set()
    for n in region.nodes:
        out.update(top.adjacency[n])
    out.difference_update(region.nodes)
    return tuple(sorted(out))


def region_log_potential(model: PairwiseModel, region: Region):
    """Sum of every log-potential touching ``region``.

    Returns ``(boundary, tensor)`` where the tensor axes are the region nodes
    followed by the boundary nodes.  This is the single source of truth for
    P(x_R | x_N(R)); both ``local_conditional`` and the compiled tables used by
    the iterative algorithms and the Gibbs sampler derive from it.
    """
    boundary = neighborhood(model, region)
    axes = region.nodes + boundary
    pos = {n: a for a, n in enumerate(axes)}
    shape = tuple(model.cardinalities[n] for n in axes)
    t = np.zeros(shape)
    nd = len(axes)

    def add(table, nodes):
        idx = [1] * nd
        for n in nodes:
            idx[pos[n]] = model.cardinalities[n]
        order = sorted(range(len(nodes)), key=lambda k: pos[nodes[k]])
        arr = np.transpose(table, order) if len(nodes) == 2 else table
        np.add(t, arr.reshape(idx), out=t)

    for r in region.nodes:
        add(model.log_unary[r], (r,))
    if len(region.nodes) == 2:
        u, v = region.nodes
        add(model.log_pairwise[model.topology.edge_id(u, v)], (u, v))
    for r in region.nodes:
        for k in model.topology.adjacency[r]:
            if k in region.nodes:
                continue
            add(model.pair_log_table(r, k), (r, k))
    return boundary, t


def _normalize_over_region(logt: np.ndarray, nr: int) -> np.ndarray:
    """Normalize a log tensor over its first ``nr`` axes, returning probabilities."""
    raxes = tuple(range(nr))
    with np.errstate(invalid="ignore"):
        m = np.max(logt, axis=raxes, keepdims=True)
    if np.any(~np.isfinite(m)):
        raise DegenerateConditionalError("all-zero unnormalized conditional table")
    w = np.exp(logt - m)
    return w / w.sum(axis=raxes, keepdims=True)


def local_conditional(model: PairwiseModel, region: Region, boundary) -> np.ndarray:
    """P(x_R | x_N(R)) as a table over region states (axes in region order).

    ``boundary`` is either a mapping node -> state covering N(R) or a sequence
    of states aligned with ``neighborhood(model, region)``.
    """
    nbr, logt = region_log_potential(model, region)
    if isinstance(boundary, Mapping):
        try:
            states = [boundary[k] for k in nbr]
        except KeyError as exc:
            raise InvalidConfigError(f"boundary is missing node {exc.args[0]}") from None
    else:
        states = list(boundary)
        if len(states) != len(nbr):
            raise InvalidConfigError(
                f"boundary has {len(states)} states for neighborhood of size {len(nbr)}")
    for k, s in zip(nbr, states):
        if not 0 <= int(s) < model.cardinalities[k]:
            raise InvalidConfigError(f"state {s} out of range for node {k}")
    sub = logt[(Ellipsis,) + tuple(int(s) for s in states)] if nbr else logt
    return _normalize_over_region(sub, len(region.nodes))


def conditional_table(model: PairwiseModel, region: Region):
    """All conditionals of ``region`` at once.

    Returns ``(boundary, table)`` with ``table`` of shape
    ``(n_boundary_configs, n_region_states)``; boundary configurations are in
    row-major order over ``boundary`` (first node most significant).
    """
    nbr, logt = region_log_potential(model, region)
    nr = len(region.nodes)
    p = _normalize_over_region(logt, nr)
    rsize = int(np.prod(p.shape[:nr]))
    p = np.moveaxis(p.reshape((rsize,) + p.shape[nr:]), 0, -1)
    return nbr, p.reshape(-1, rsize)


@dataclass(frozen=True)
class InstanceConfig:
    rows: int
    cols: int
    var_theta: float
    var_phi: float
    seed: int

    def __post_init__(self):
        if self.rows < 3 or self.cols < 3:
            raise InvalidDimensionError(
                f"grid needs rows, cols >= 3, got ({self.rows}, {self.cols})")
        if not (self.var_theta > 0 and self.var_phi > 0):
            raise InvalidParameterError("variances must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


def standard_normals(seed: int, n: int) -> np.ndarray:
    """``n`` N(0, 1) draws from PCG64(seed) uniforms by the Box-Muller transform.

    Pairs of uniforms (u1, u2) on [0, 1) map to
    sqrt(-2 log(1 - u1)) * (cos(2 pi u2), sin(2 pi u2)), consumed in order.
    """
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    m = (n + 1) // 2
    u = rng.random(2 * m)
    r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
    a = 2.0 * math.pi * u[1::2]
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(a)
    z[1::2] = r * np.sin(a)
    return z[:n]


def random_ising_instance(cfg: InstanceConfig) -> IsingParams:
    """Spin-glass instance on a torus.

    theta_ij ~ N(0, var_theta) for the edges in topology order, then
    g_i ~ N(0, var_phi) for the nodes, and phi_i = g_i - 1/2 sum_j theta_ij.
    The shift makes the g = 0 model invariant under x -> 1 - x.
    """
    top = torus_grid(cfg.rows, cfg.cols)
    z = standard_normals(cfg.seed, len(top.edges) + top.node_count)
    theta = math.sqrt(cfg.var_theta) * z[: len(top.edges)]
    g = math.sqrt(cfg.var_phi) * z[len(top.edges):]
    return IsingParams(top, theta, g - 0.5 * coupling_sums(top, theta))


def coupling_sums(top: Topology, theta) -> np.ndarray:
    out = np.zeros(top.node_count)
    for (u, v), th in zip(top.edges, theta):
        out[u] += th
        out[v] += th
    return out


# ---------------------------------------------------------------------------
# JSON model files


def model_to_dict(model: PairwiseModel) -> dict:
    if model.ising is not None:
        p = model.ising
        return {"ising": {
            "edges": [[u, v, float(t)] for (u, v), t in zip(model.topology.edges, p.theta)],
            "phi": [float(x) for x in p.phi],
        }}
    return {
        "nodes": list(model.cardinalities),
        "unary": [t.tolist() for t in model.unary],
        "edges": [{"pair": [u, v], "table": t.reshape(-1).tolist()}
                  for (u, v), t in zip(model.topology.edges, model.pairwise)],
    }


def _number(x, where):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ModelFormatError(f"{where}: expected a number, got {x!r}")
    if not math.isfinite(x):
        raise ModelFormatError(f"{where}: non-finite value")
    return float(x)


def model_from_dict(doc: Mapping) -> PairwiseModel:
    """Parse and validate a model document; errors name the first bad location."""
    if not isinstance(doc, Mapping):
        raise ModelFormatError("<root>: expected an object")
    if "ising" in doc:
        d = doc["ising"]
        if not isinstance(d, Mapping):
            raise ModelFormatError("ising: expected an object")
        phi = d.get("phi")
        if not isinstance(phi, list) or not phi:
            raise ModelFormatError("ising.phi: expected a non-empty list")
        phi = [_number(x, f"ising.phi[{k}]") for k, x in enumerate(phi)]
        raw = d.get("edges", [])
        if not isinstance(raw, list):
            raise ModelFormatError("ising.edges: expected a list")
        pairs, thetas = [], []
        for k, e in enumerate(raw):
            if not isinstance(e, list) or len(e) != 3:
                raise ModelFormatError(f"ising.edges[{k}]: expected [i, j, theta]")
            for a in (0, 1):
                if isinstance(e[a], bool) or not isinstance(e[a], int):
                    raise ModelFormatError(f"ising.edges[{k}][{a}]: expected an integer node id")
            pairs.append((e[0], e[1]))
            thetas.append(_number(e[2], f"ising.edges[{k}][2]"))
        try:
            top = Topology.from_edges(len(phi), pairs)
        except InvalidModelError as exc:
            raise ModelFormatError(f"ising.{exc}") from None
        order = np.argsort([top.edge_id(u, v) for u, v in pairs], kind="stable")
        theta = np.asarray(thetas)[order] if thetas else np.zeros(0)
        return build_ising(IsingParams(top, theta, phi))

    cards = doc.get("nodes")
    if not isinstance(cards, list) or not cards:
        raise ModelFormatError("nodes: expected a non-empty list of cardinalities")
    for k, c in enumerate(cards):
        if isinstance(c, bool) or not isinstance(c, int) or c < 2:
            raise ModelFormatError(f"nodes[{k}]: cardinality must be an integer >= 2")
    n = len(cards)
    unary_raw = doc.get("unary")
    if unary_raw is None:
        unary = [np.ones(c) for c in cards]
    else:
        if not isinstance(unary_raw, list) or len(unary_raw) != n:
            raise ModelFormatError(f"unary: expected a list of {n} tables")
        unary = []
        for k, t in enumerate(unary_raw):
            if not isinstance(t, list) or len(t) != cards[k]:
                raise ModelFormatError(f"unary[{k}]: expected {cards[k]} entries")
            unary.append(np.array([_number(x, f"unary[{k}][{s}]") for s, x in enumerate(t)]))
    edges_raw = doc.get("edges", [])
    if not isinstance(edges_raw, list):
        raise ModelFormatError("edges: expected a list")
    pairs, tables = [], []
    for k, e in enumerate(edges_raw):
        if not isinstance(e, Mapping):
            raise ModelFormatError(f"edges[{k}]: expected an object")
        pr = e.get("pair")
        if (not isinstance(pr, list) or len(pr) != 2
                or any(isinstance(a, bool) or not isinstance(a, int) for a in pr)):
            raise ModelFormatError(f"edges[{k}].pair: expected two integer node ids")
        u, v = pr
        if not (0 <= u < n and 0 <= v < n):
            raise ModelFormatError(f"edges[{k}].pair: node id out of range")
        flat = e.get("table")
        if not isinstance(flat, list) or len(flat) != cards[u] * cards[v]:
            raise ModelFormatError(
                f"edges[{k}].table: expected {cards[u] * cards[v]} row-major entries")
        t = np.array([_number(x, f"edges[{k}].table[{s}]") for s, x in enumerate(flat)])
        t = t.reshape(cards[u], cards[v])
        pairs.append((u, v))
        tables.append(t if u < v else t.T)
    try:
        top = Topology.from_edges(n, pairs)
    except InvalidModelError as exc:
        raise ModelFormatError(str(exc)) from None
    ordered = [None] * len(pairs)
    for (u, v), t in zip(pairs, tables):
        ordered[top.edge_id(u, v)] = t
    try:
        return PairwiseModel(top, tuple(cards), tuple(unary), tuple(ordered))
    except InvalidModelError as exc:
        raise ModelFormatError(str(exc)) from None


def load_model(path) -> PairwiseModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(doc)


def save_model(model: PairwiseModel, path, **meta) -> None:
    doc = model_to_dict(model)
    if meta:
        doc["meta"] = meta
    Path(path).write_text(json.dumps(doc, indent=1))
