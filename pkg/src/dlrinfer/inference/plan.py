"""Flatten a PairwiseModel into index and table arrays consumed by the kernels.

Regions are numbered nodes first (``0 .. n-1``) then edges (``n .. n+E-1``).
Every region carries:

* its boundary N(R) as a sorted node list,
* its conditional table P(x_R | x_N(R)) laid out ``[boundary config, region state]``
  with boundary configs in row-major order (first boundary node most significant),
* its links: one entry per (region node r, boundary node k) pair joined by an edge,
  used to assemble the Bethe neighborhood distributions.

Belief vectors are concatenations of per-region tables: singletons follow
``node_off``, pair tables follow ``edge_off`` (row-major ``[x_u, x_v]``), and a
level-2 vector is singletons followed by pairs.  Messages are indexed by
directed edge ``d``: ``2e`` is ``u -> v`` (a table over x_v) and ``2e + 1`` is
``v -> u``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..errors import UnsupportedModelError
from ..model import PairwiseModel, Region, conditional_table

MAX_BOUNDARY_CONFIGS = 2**20


class Plan(NamedTuple):
    n: int
    E: int
    card: np.ndarray
    node_off: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    edge_off: np.ndarray
    nbr_ptr: np.ndarray
    nbr: np.ndarray
    nbr_edge: np.ndarray
    nbr_isu: np.ndarray
    reg_r0: np.ndarray
    reg_r1: np.ndarray
    reg_size: np.ndarray
    reg_bptr: np.ndarray
    reg_bnd: np.ndarray
    reg_coff: np.ndarray
    cond: np.ndarray
    logcond: np.ndarray
    reg_lptr: np.ndarray
    link_bpos: np.ndarray
    link_r: np.ndarray
    link_edge: np.ndarray
    link_risu: np.ndarray
    unary: np.ndarray
    pair_pot: np.ndarray
    msg_off: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    is_ising: bool
    max_nb: int
    max_card: int
    max_reg: int

    @property
    def node_size(self) -> int:
        return int(self.node_off[-1])

    @property
    def edge_size(self) -> int:
        return int(self.edge_off[-1])

    @property
    def msg_size(self) -> int:
        return int(self.msg_off[-1])


def _i64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.int64).reshape(-1)


def build_plan(model: PairwiseModel) -> Plan:
    top = model.topology
    n, E = top.node_count, len(top.edges)
    card = _i64(model.cardinalities)
    node_off = _i64(np.concatenate([[0], np.cumsum(card)]))
    eu = _i64([u for u, _ in top.edges])
    ev = _i64([v for _, v in top.edges])
    edge_off = _i64(np.concatenate([[0], np.cumsum(card[eu] * card[ev])])) if E else _i64([0])

    nbr_ptr, nbr, nbr_edge, nbr_isu = [0], [], [], []
    for i in range(n):
        for k in top.adjacency[i]:
            nbr.append(k)
            nbr_edge.append(top.edge_id(i, k))
            nbr_isu.append(1 if i < k else 0)
        nbr_ptr.append(len(nbr))

    r0, r1, rsize, bptr, bnd, coff = [], [], [], [0], [], [0]
    conds, lptr = [], [0]
    lb, lr, le, lrisu = [], [], [], []
    regions = [Region.of(i) for i in range(n)] + [Region.of(u, v) for u, v in top.edges]
    max_nb = 1
    for reg in regions:
        nodes = reg.nodes
        size = int(np.prod([card[a] for a in nodes]))
        nb_nodes, table = conditional_table(model, reg)
        nb = table.shape[0]
        if nb > MAX_BOUNDARY_CONFIGS:
            raise UnsupportedModelError(
                f"region {nodes} has {nb} boundary configurations (limit {MAX_BOUNDARY_CONFIGS})")
        max_nb = max(max_nb, nb)
        r0.append(nodes[0])
        r1.append(nodes[1] if len(nodes) == 2 else -1)
        rsize.append(size)
        bnd.extend(nb_nodes)
        bptr.append(len(bnd))
        conds.append(table.reshape(-1))
        coff.append(coff[-1] + table.size)
        for p, k in enumerate(nb_nodes):
            for rpos, r in enumerate(nodes):
                if k in top.adjacency[r]:
                    lb.append(p)
                    lr.append(rpos)
                    le.append(top.edge_id(r, k))
                    lrisu.append(1 if r < k else 0)
        lptr.append(len(lb))
    cond = np.concatenate(conds) if conds else np.zeros(0)
    with np.errstate(divide="ignore"):
        logcond = np.log(cond)

    msg_sizes = []
    for u, v in top.edges:
        msg_sizes += [card[v], card[u]]
    msg_off = _i64(np.concatenate([[0], np.cumsum(msg_sizes)])) if E else _i64([0])

    if model.ising is not None:
        theta, phi, is_ising = model.ising.theta.copy(), model.ising.phi.copy(), True
    else:
        theta, phi, is_ising = np.zeros(E), np.zeros(n), False

    return Plan(
        n=n, E=E, card=card, node_off=node_off, edge_u=eu, edge_v=ev, edge_off=edge_off,
        nbr_ptr=_i64(nbr_ptr), nbr=_i64(nbr), nbr_edge=_i64(nbr_edge), nbr_isu=_i64(nbr_isu),
        reg_r0=_i64(r0), reg_r1=_i64(r1), reg_size=_i64(rsize), reg_bptr=_i64(bptr),
        reg_bnd=_i64(bnd), reg_coff=_i64(coff), cond=cond, logcond=logcond,
        reg_lptr=_i64(lptr), link_bpos=_i64(lb), link_r=_i64(lr), link_edge=_i64(le),
        link_risu=_i64(lrisu),
        unary=np.concatenate([np.asarray(t, dtype=float) for t in model.unary]),
        pair_pot=(np.concatenate([np.asarray(t, dtype=float).reshape(-1) for t in model.pairwise])
                  if E else np.zeros(0)),
        msg_off=msg_off, theta=theta, phi=phi, is_ising=is_ising,
        max_nb=int(max_nb), max_card=int(card.max()), max_reg=int(max(rsize)),
    )
