"""Belief and message containers.

A level-1 set holds singleton tables, a level-1.5 set holds only edge tables
(singletons are derived by averaging edge marginals), and a level-2 set holds
both.  Edge tables are indexed ``[x_u, x_v]`` for ``topology.edges[e] == (u, v)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import InvalidConfigError, InvalidModelError, PreconditionError
from ..model import PairwiseModel, Topology

LEVELS = (1, 1.5, 2)
NORM_TOL = 1e-9


def _table(a, shape, where) -> np.ndarray:
    t = np.array(a, dtype=np.float64)
    if t.shape != shape:
        raise InvalidModelError(f"{where}: shape {t.shape}, expected {shape}")
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise InvalidModelError(f"{where}: entries must be finite and nonnegative")
    if abs(t.sum() - 1.0) > NORM_TOL:
        raise InvalidModelError(f"{where}: sums to {t.sum():.12g}, not 1")
    t.setflags(write=False)
    return t


def parse_level(level) -> float:
    for lv in LEVELS:
        if level == lv or str(level) == str(lv):
            return lv
    raise InvalidConfigError(f"level must be one of {LEVELS}, got {level!r}")


@dataclass(frozen=True, eq=False)
class BeliefSet:
    topology: Topology
    cardinalities: tuple[int, ...]
    level: float
    singleton_tables: tuple[np.ndarray, ...] | None = None
    pair_tables: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        top = self.topology
        level = parse_level(self.level)
        cards = tuple(int(c) for c in self.cardinalities)
        object.__setattr__(self, "level", level)
        object.__setattr__(self, "cardinalities", cards)
        if level in (1, 2):
            if self.singleton_tables is None or len(self.singleton_tables) != top.node_count:
                raise InvalidModelError(f"level {level} needs {top.node_count} singleton tables")
            object.__setattr__(self, "singleton_tables", tuple(
                _table(t, (cards[i],), f"b[{i}]") for i, t in enumerate(self.singleton_tables)))
        elif self.singleton_tables is not None:
            raise InvalidModelError("level 1.5 stores pair tables only")
        if level in (1.5, 2):
            if self.pair_tables is None or len(self.pair_tables) != len(top.edges):
                raise InvalidModelError(f"level {level} needs {len(top.edges)} pair tables")
            object.__setattr__(self, "pair_tables", tuple(
                _table(t, (cards[u], cards[v]), f"b[{u},{v}]")
                for t, (u, v) in zip(self.pair_tables, top.edges)))
        elif self.pair_tables is not None:
            raise InvalidModelError("level 1 stores singleton tables only")
        if level == 1.5:
            lonely = [i for i in range(top.node_count) if top.degree(i) == 0]
            if lonely:
                raise PreconditionError(
                    f"level 1.5 cannot derive a singleton for isolated node {lonely[0]}")

    @cached_property
    def singletons(self) -> tuple[np.ndarray, ...]:
        """Singleton tables; derived from the edge tables at level 1.5."""
        if self.level != 1.5:
            return self.singleton_tables
        top = self.topology
        acc = [np.zeros(c) for c in self.cardinalities]
        for t, (u, v) in zip(self.pair_tables, top.edges):
            acc[u] += t.sum(axis=1)
            acc[v] += t.sum(axis=0)
        return tuple(a / top.degree(i) for i, a in enumerate(acc))

    @property
    def pairs(self) -> tuple[np.ndarray, ...] | None:
        return self.pair_tables

    def pair(self, i: int, j: int) -> np.ndarray:
        """Edge table oriented as ``[x_i, x_j]``."""
        t = self.pair_tables[self.topology.edge_id(i, j)]
        return t if i < j else t.T

    def state_vector(self) -> np.ndarray:
        """Represented tables flattened: singletons, pairs, or both in that order."""
        parts = []
        if self.singleton_tables is not None:
            parts += [t.ravel() for t in self.singleton_tables]
        if self.pair_tables is not None:
            parts += [t.ravel() for t in self.pair_tables]
        return np.concatenate(parts) if parts else np.zeros(0)

    @classmethod
    def from_vector(cls, model_or_topology, cardinalities, level, vec) -> "BeliefSet":
        top = getattr(model_or_topology, "topology", model_or_topology)
        level = parse_level(level)
        cards = tuple(cardinalities)
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        singles = pairs = None
        if level in (1, 2):
            singles = []
            for c in cards:
                singles.append(vec[pos:pos + c])
                pos += c
        if level in (1.5, 2):
            pairs = []
            for u, v in top.edges:
                k = cards[u] * cards[v]
                pairs.append(vec[pos:pos + k].reshape(cards[u], cards[v]))
                pos += k
        if pos != vec.size:
            raise InvalidModelError(f"belief vector has {vec.size} entries, expected {pos}")
        return cls(top, cards, level, singles, pairs)

    def to_dict(self) -> dict:
        doc = {"level": self.level}
        if self.singleton_tables is not None:
            doc["nodes"] = [t.tolist() for t in self.singleton_tables]
        if self.pair_tables is not None:
            doc["edges"] = [{"pair": [u, v], "table": t.tolist()}
                            for (u, v), t in zip(self.topology.edges, self.pair_tables)]
        return doc

    @classmethod
    def from_dict(cls, model: PairwiseModel, doc) -> "BeliefSet":
        level = parse_level(doc.get("level"))
        singles = doc.get("nodes")
        pairs = None
        if "edges" in doc:
            pairs = [None] * len(model.topology.edges)
            for k, e in enumerate(doc["edges"]):
                u, v = e["pair"]
                t = np.asarray(e["table"], dtype=float)
                pairs[model.topology.edge_id(u, v)] = t if u < v else t.T
        return cls(model.topology, model.cardinalities, level, singles, pairs)

    def with_level(self, level) -> "BeliefSet":
        """Project onto another level by dropping or deriving tables."""
        level = parse_level(level)
        if level == self.level:
            return self
        singles = self.singletons if level in (1, 2) else None
        pairs = self.pair_tables if level in (1.5, 2) else None
        if level in (1.5, 2) and pairs is None:
            pairs = tuple(np.outer(self.singletons[u], self.singletons[v])
                          for u, v in self.topology.edges)
        return BeliefSet(self.topology, self.cardinalities, level, singles, pairs)


@dataclass(frozen=True, eq=False)
class MessageSet:
    """Normalized positive messages; ``tables[2e]`` is u -> v over x_v and
    ``tables[2e + 1]`` is v -> u over x_u for ``topology.edges[e] == (u, v)``."""

    topology: Topology
    cardinalities: tuple[int, ...]
    tables: tuple[np.ndarray, ...]

    def __post_init__(self):
        top = self.topology
        cards = tuple(int(c) for c in self.cardinalities)
        if len(self.tables) != 2 * len(top.edges):
            raise InvalidModelError(f"{len(self.tables)} messages for {len(top.edges)} edges")
        out = []
        for d, m in enumerate(self.tables):
            u, v = top.edges[d // 2]
            src, dst = (u, v) if d % 2 == 0 else (v, u)
            t = _table(m, (cards[dst],), f"m[{src}->{dst}]")
            if np.any(t <= 0):
                raise InvalidModelError(f"m[{src}->{dst}]: messages must be strictly positive")
            out.append(t)
        object.__setattr__(self, "cardinalities", cards)
        object.__setattr__(self, "tables", tuple(out))

    def message(self, i: int, j: int) -> np.ndarray:
        """m_{i->j}(x_j)."""
        e = self.topology.edge_id(i, j)
        return self.tables[2 * e + (0 if i < j else 1)]

    def state_vector(self) -> np.ndarray:
        if not self.tables:
            return np.zeros(0)
        return np.concatenate([t.ravel() for t in self.tables])

    @classmethod
    def from_vector(cls, model: PairwiseModel, vec) -> "MessageSet":
        vec = np.asarray(vec, dtype=np.float64)
        cards = model.cardinalities
        tables, pos = [], 0
        for u, v in model.topology.edges:
            for dst in (v, u):
                tables.append(vec[pos:pos + cards[dst]])
                pos += cards[dst]
        return cls(model.topology, cards, tuple(tables))

    def to_dict(self) -> dict:
        out = []
        for d, t in enumerate(self.tables):
            u, v = self.topology.edges[d // 2]
            src, dst = (u, v) if d % 2 == 0 else (v, u)
            out.append({"from": src, "to": dst, "table": t.tolist()})
        return {"messages": out}


def _random_table(rng, shape):
    t = rng.random(shape) + 1e-3
    return t / t.sum()


def init_beliefs(model: PairwiseModel, level, seed: int | None = None) -> BeliefSet:
    """Uniform tables, or random positive tables when ``seed`` is given."""
    level = parse_level(level)
    cards = model.cardinalities
    rng = None if seed is None else np.random.default_rng(seed)

    def make(shape):
        if rng is None:
            return np.full(shape, 1.0 / np.prod(shape))
        return _random_table(rng, shape)

    singles = [make((c,)) for c in cards] if level in (1, 2) else None
    pairs = ([make((cards[u], cards[v])) for u, v in model.topology.edges]
             if level in (1.5, 2) else None)
    return BeliefSet(model.topology, cards, level, singles, pairs)


def init_messages(model: PairwiseModel, seed: int | None = None) -> MessageSet:
    cards = model.cardinalities
    rng = None if seed is None else np.random.default_rng(seed)
    tables = []
    for u, v in model.topology.edges:
        for dst in (v, u):
            tables.append(np.full(cards[dst], 1.0 / cards[dst]) if rng is None
                          else _random_table(rng, (cards[dst],)))
    return MessageSet(model.topology, cards, tuple(tables))
