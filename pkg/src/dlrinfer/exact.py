"""Brute-force exact inference by enumerating every configuration.

This is the ground truth every approximation is measured against, so it is
deliberately simple: configurations are enumerated in row-major order (node 0
most significant) in fixed-size chunks, weights are accumulated in the log
domain with a running max, and chunk totals are combined with ``math.fsum``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, ModelTooLargeError
from .model import PairwiseModel, Region, neighborhood

MAX_CONFIGS = 2**24
CHUNK = 2**16


@dataclass(frozen=True)
class ExactSummary:
    log_partition: float
    singleton_marginals: tuple[np.ndarray, ...]
    pairwise_marginals: tuple[np.ndarray, ...]


def state_space_size(model: PairwiseModel) -> int:
    return math.prod(model.cardinalities)


def _check_size(model: PairwiseModel, cap: int = MAX_CONFIGS) -> int:
    size = state_space_size(model)
    if size > cap:
        raise ModelTooLargeError(f"{size} configurations exceed the cap of {cap}")
    return size


def iter_configs(model: PairwiseModel, chunk: int = CHUNK):
    """Yield ``(m, n)`` integer arrays covering every configuration in order."""
    size = state_space_size(model)
    for start in range(0, size, chunk):
        idx = np.arange(start, min(size, start + chunk))
        yield np.stack(np.unravel_index(idx, model.cardinalities), axis=1)


def log_weights(model: PairwiseModel, configs: np.ndarray) -> np.ndarray:
    """Unnormalized log P for each row of ``configs``."""
    configs = np.asarray(configs)
    out = np.zeros(configs.shape[0])
    for i, t in enumerate(model.log_unary):
        out += t[configs[:, i]]
    for (u, v), t in zip(model.topology.edges, model.log_pairwise):
        out += t[configs[:, u], configs[:, v]]
    return out


def partition_function(model: PairwiseModel) -> float:
    """log Z by streaming log-sum-exp."""
    _check_size(model)
    m = -math.inf
    parts: list[float] = []
    for x in iter_configs(model):
        lw = log_weights(model, x)
        cm = float(np.max(lw))
        if cm == -math.inf:
            continue
        if cm > m:
            parts = [p * math.exp(m - cm) for p in parts] if m > -math.inf else []
            m = cm
        parts.append(float(np.sum(np.exp(lw - m))))
    return m + math.log(math.fsum(parts))


def exact_marginals(model: PairwiseModel) -> ExactSummary:
    _check_size(model)
    top = model.topology
    cards = model.cardinalities
    m = -math.inf
    node_acc = [np.zeros(c) for c in cards]
    edge_acc = [np.zeros((cards[u], cards[v])) for u, v in top.edges]
    total: list[float] = []
    for x in iter_configs(model):
        lw = log_weights(model, x)
        cm = float(np.max(lw))
        if cm == -math.inf:
            continue
        if cm > m:
            if m > -math.inf:
                scale = math.exp(m - cm)
                total = [t * scale for t in total]
                for a in node_acc + edge_acc:
                    a *= scale
            m = cm
        w = np.exp(lw - m)
        total.append(float(np.sum(w)))
        for i in range(top.node_count):
            node_acc[i] += np.bincount(x[:, i], weights=w, minlength=cards[i])
        for e, (u, v) in enumerate(top.edges):
            flat = np.bincount(x[:, u] * cards[v] + x[:, v], weights=w,
                               minlength=cards[u] * cards[v])
            edge_acc[e] += flat.reshape(cards[u], cards[v])
    z = math.fsum(total)
    singles = tuple(a / z for a in node_acc)
    pairs = tuple(a / z for a in edge_acc)
    return ExactSummary(m + math.log(z), singles, pairs)


def _check_config(model: PairwiseModel, config) -> np.ndarray:
    x = np.asarray(config)
    if x.shape != (model.node_count,):
        raise InvalidConfigError(
            f"configuration has {x.size} entries for {model.node_count} nodes")
    for i, (s, c) in enumerate(zip(x, model.cardinalities)):
        if not (float(s).is_integer() and 0 <= s < c):
            raise InvalidConfigError(f"state {s} invalid for node {i} with {c} states")
    return x.astype(np.int64)


def joint_probability(model: PairwiseModel, config, log_partition: float | None = None) -> float:
    """P(x); pass a precomputed ``log_partition`` when evaluating many configs."""
    x = _check_config(model, config)
    if log_partition is None:
        log_partition = partition_function(model)
    return math.exp(float(log_weights(model, x[None, :])[0]) - log_partition)


def joint_table(model: PairwiseModel, cap: int = 2**20) -> np.ndarray:
    """Full normalized joint as a tensor with one axis per node."""
    _check_size(model, cap)
    lw = np.concatenate([log_weights(model, x) for x in iter_configs(model)])
    p = np.exp(lw - lw.max())
    return (p / p.sum()).reshape(model.cardinalities)


def conditional_from_joint(joint: np.ndarray, region: Region, boundary_nodes, boundary_states):
    """P(x_R | x_B = s) read off a full joint tensor by summing out the rest."""
    n = joint.ndim
    keep = set(region.nodes) | set(boundary_nodes)
    marg = joint.sum(axis=tuple(a for a in range(n) if a not in keep))
    axes = sorted(keep)
    index = []
    for a in axes:
        if a in boundary_nodes:
            index.append(int(boundary_states[list(boundary_nodes).index(a)]))
        else:
            index.append(slice(None))
    t = marg[tuple(index)]
    return t / t.sum()


def exact_neighborhood_marginal(joint: np.ndarray, model: PairwiseModel, region: Region):
    """P(x_N(R)) as a tensor over the sorted neighborhood."""
    nbr = neighborhood(model, region)
    return joint.sum(axis=tuple(a for a in range(joint.ndim) if a not in nbr))
