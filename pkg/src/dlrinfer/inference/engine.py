"""Single-step operators and the fixed-point driver for every algorithm.

Algorithm ids:

    fn      factorized neighbors on singletons
    fn2     factorized neighbors on edges, singletons derived from edges
    cp      Bethe neighborhoods built from edge tables only
    bp_dlr  Bethe neighborhoods from singleton and edge tables
    bp      message-passing belief propagation
    mf      mean field (closed form for Ising models)
    mf2     pair-corrected mean field, binary Ising models only
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    DegenerateConditionalError,
    InvalidConfigError,
    LogOfZeroError,
    StepError,
    UnsupportedModelError,
)
from ..model import PairwiseModel
from . import kernels as K
from .beliefs import BeliefSet, MessageSet, init_beliefs, init_messages, parse_level

ALGORITHMS = ("fn", "fn2", "cp", "bp_dlr", "bp", "mf", "mf2")
KIND = {"fn": K.FN, "fn2": K.FN2, "cp": K.CP, "bp_dlr": K.BP_DLR, "bp": K.BP,
        "mf": K.MF, "mf2": K.MF2}
LEVEL = {"fn": 1, "fn2": 1.5, "cp": 1.5, "bp_dlr": 2, "bp": 2, "mf": 1, "mf2": 1}
SEQUENTIAL_OK = ("fn", "mf")
TAIL_WINDOW = 100


def algorithm_level(algorithm: str) -> float:
    return LEVEL[check_algorithm(algorithm)]


def check_algorithm(algorithm: str) -> str:
    a = str(algorithm).lower()
    if a not in KIND:
        raise InvalidConfigError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    return a


def check_compatible(algorithm: str, model: PairwiseModel) -> None:
    if algorithm == "mf2" and (model.ising is None or not model.is_binary):
        raise UnsupportedModelError("mf2 requires a binary Ising model")
    if LEVEL[algorithm] == 1.5:
        lonely = [i for i in range(model.node_count) if model.topology.degree(i) == 0]
        if lonely:
            raise UnsupportedModelError(
                f"{algorithm} needs every node to have a neighbor (node {lonely[0]} is isolated)")


def _region_name(model: PairwiseModel, r: int) -> str:
    n = model.node_count
    if r < n:
        return f"node {r}"
    u, v = model.topology.edges[r - n]
    return f"edge ({u}, {v})"


def _log_zero_detail(model: PairwiseModel, beliefs_vec: np.ndarray, i: int) -> str:
    P = model.plan
    lo, hi = P.reg_bptr[i], P.reg_bptr[i + 1]
    bnd = P.reg_bnd[lo:hi]
    w = np.ones(1)
    for k in bnd:
        w = np.outer(w, beliefs_vec[P.node_off[k]:P.node_off[k + 1]]).ravel()
    rs = P.reg_size[i]
    lc = P.logcond[P.reg_coff[i]:P.reg_coff[i] + w.size * rs].reshape(w.size, rs)
    bad = np.flatnonzero((w > 0) & np.any(np.isneginf(lc), axis=1))
    if bad.size == 0:
        return f"node {i}"
    states = np.unravel_index(bad[0], [P.card[k] for k in bnd])
    return f"node {i} with boundary {dict(zip(bnd.tolist(), (int(s) for s in states)))}"


def raise_for_status(model, status, region, vec, iteration=None):
    if status == K.OK:
        return
    if status == K.ERR_LOG_ZERO:
        exc = LogOfZeroError(f"log(0) with nonzero weight at {_log_zero_detail(model, vec, region)}")
    elif status == K.ERR_DEGENERATE:
        exc = DegenerateConditionalError(
            f"zero normalizer in the update of {_region_name(model, region)}")
    else:
        exc = DegenerateConditionalError("non-finite beliefs")
    if iteration is None:
        raise exc
    raise StepError(str(exc), iteration) from exc


def _require_level(beliefs: BeliefSet, level, name: str) -> None:
    if beliefs.level != level:
        raise InvalidConfigError(f"{name} needs level-{level} beliefs, got level {beliefs.level}")


def _apply(algorithm: str, model: PairwiseModel, vec: np.ndarray, sequential=False,
           clamp=1e-12, kind=None) -> tuple[np.ndarray, int]:
    P = model.plan
    kind = KIND[algorithm] if kind is None else kind
    out, status, region, clamps = K.single_step(kind, P, np.ascontiguousarray(vec, dtype=np.float64),
                                                sequential, clamp)
    raise_for_status(model, status, region, vec)
    return out, int(clamps)


def _belief_step(algorithm, model, beliefs, sequential=False, clamp=1e-12, kind=None):
    check_compatible(algorithm, model)
    _require_level(beliefs, LEVEL[algorithm], f"{algorithm}_step")
    if sequential and algorithm not in SEQUENTIAL_OK:
        raise InvalidConfigError(f"sequential schedule is only offered for {SEQUENTIAL_OK}")
    out, _ = _apply(algorithm, model, beliefs.state_vector(), sequential, clamp, kind)
    return BeliefSet.from_vector(model, model.cardinalities, beliefs.level, out)


def fn_step(model, beliefs, sequential=False) -> BeliefSet:
    """b_i <- sum_{x_N} P(x_i | x_N) prod_{k in N} b_k(x_k) for every node."""
    return _belief_step("fn", model, beliefs, sequential)


def fn2_step(model, beliefs) -> BeliefSet:
    """Edge update with a product of derived singletons over the edge's boundary."""
    return _belief_step("fn2", model, beliefs)


def cp_step(model, beliefs, clamp=1e-12) -> BeliefSet:
    """Edge update with a Bethe neighborhood built from edge tables alone."""
    return _belief_step("cp", model, beliefs, clamp=clamp)


def bp_dlr_step(model, beliefs, clamp=1e-12) -> BeliefSet:
    """Simultaneous singleton and edge update with Bethe neighborhoods."""
    return _belief_step("bp_dlr", model, beliefs, clamp=clamp)


def mf_step(model, beliefs, sequential=False, closed_form=True) -> BeliefSet:
    """log b_i <- E_{prod b}[log P(x_i | x_N)] + const.

    On Ising models the closed form sigmoid(phi_i + sum_j theta_ij b_j(1)) is
    used unless ``closed_form`` is false.
    """
    kind = K.MF if closed_form else K.MF_GENERIC
    return _belief_step("mf", model, beliefs, sequential, kind=kind)


def mf2_step(model, beliefs) -> BeliefSet:
    """Average over neighbors k of P(x_i = 1) under the mean-field pair
    distribution of (i, k) whose outside neighbors are set to their means."""
    return _belief_step("mf2", model, beliefs)


def bp_message_step(model, messages: MessageSet) -> MessageSet:
    """m_{i->j}(x_j) <- sum_{x_i} Psi_ij Psi_i prod_{k != j} m_{k->i}(x_i), normalized."""
    out, _ = _apply("bp", model, messages.state_vector())
    return MessageSet.from_vector(model, out)


def beliefs_from_messages(model, messages: MessageSet) -> BeliefSet:
    P = model.plan
    b = np.empty(P.node_size + P.edge_size)
    cu = np.empty(P.max_card)
    cv = np.empty(P.max_card)
    K.beliefs_from_messages(P, messages.state_vector(), b, cu, cv)
    return BeliefSet.from_vector(model, model.cardinalities, 2, b)


# ---------------------------------------------------------------------------
# driver


@dataclass(frozen=True)
class RunConfig:
    tolerance: float = 1e-6
    max_iterations: int = 1_000_000
    schedule: str = "parallel"
    damping: float = 0.0
    clamp_epsilon: float = 1e-12

    def __post_init__(self):
        if not self.tolerance > 0:
            raise InvalidConfigError("tolerance must be positive")
        if int(self.max_iterations) < 1:
            raise InvalidConfigError("max_iterations must be at least 1")
        if self.schedule not in ("parallel", "sequential"):
            raise InvalidConfigError(f"schedule must be parallel or sequential, got {self.schedule!r}")
        if not 0.0 <= self.damping < 1.0:
            raise InvalidConfigError("damping must lie in [0, 1)")
        if not self.clamp_epsilon > 0:
            raise InvalidConfigError("clamp_epsilon must be positive")


@dataclass
class RunReport:
    algorithm: str
    iterations: int
    converged: bool
    final_residual: float
    residual_trace: np.ndarray
    wskl_trace: np.ndarray | None = None
    oscillation_amplitude: float | None = None
    clamp_count: int = 0
    cycle_period: int = 0
    damping: float = 0.0
    schedule: str = "parallel"
    tail_average: BeliefSet | None = field(default=None, repr=False)
    messages: MessageSet | None = field(default=None, repr=False)

    def to_dict(self, thin: int = 1) -> dict:
        thin = max(1, int(thin))

        def trace(t):
            return None if t is None else [float(x) for x in t[::thin]]

        return {
            "algorithm": self.algorithm,
            "iterations": self.iterations,
            "converged": self.converged,
            "final_residual": self.final_residual,
            "oscillation_amplitude": self.oscillation_amplitude,
            "clamp_count": self.clamp_count,
            "cycle_period": self.cycle_period,
            "damping": self.damping,
            "schedule": self.schedule,
            "trace_stride": thin,
            "residual_trace": trace(self.residual_trace),
            "wskl_trace": trace(self.wskl_trace),
        }


def _table_offsets(model: PairwiseModel, level) -> np.ndarray:
    P = model.plan
    offs = []
    if level in (1, 2):
        offs.extend(P.node_off[:-1].tolist())
    base = P.node_size if level == 2 else 0
    if level in (1.5, 2):
        offs.extend((base + P.edge_off[:-1]).tolist())
    size = (P.node_size if level in (1, 2) else 0) + (P.edge_size if level in (1.5, 2) else 0)
    return np.asarray(offs + [size], dtype=np.int64)


def _message_offsets(model: PairwiseModel) -> np.ndarray:
    return np.asarray(model.plan.msg_off, dtype=np.int64)


def _alpha(model, level, weights) -> np.ndarray:
    n, E = model.node_count, len(model.topology.edges)
    if weights is None:
        a_s, a_p = np.ones(n), np.ones(E)
    else:
        a_s = np.asarray(weights.alpha_singleton, dtype=float)
        a_p = np.asarray(weights.alpha_pair, dtype=float)
    parts = []
    if level in (1, 2):
        parts.append(a_s)
    if level in (1.5, 2):
        parts.append(a_p)
    return np.concatenate(parts)


def run_to_convergence(algorithm: str, model: PairwiseModel, config: RunConfig | None = None,
                       init=None, record_wskl: bool = False, weights=None,
                       detect_cycles: bool = True):
    """Iterate an update map until the largest change of any table is below tolerance.

    ``init`` is a BeliefSet (a MessageSet for ``bp``); uniform when omitted.
    With ``record_wskl`` the report carries, for every iteration, the weighted
    KL divergence between the current tables and their image under the map;
    ``weights`` defaults to weight 1 on every table the algorithm represents.
    Returns ``(beliefs, report)``; for non-converged runs the last iterate.
    """
    algorithm = check_algorithm(algorithm)
    check_compatible(algorithm, model)
    config = config or RunConfig()
    sequential = config.schedule == "sequential"
    if sequential and algorithm not in SEQUENTIAL_OK:
        raise InvalidConfigError(f"sequential schedule is only offered for {SEQUENTIAL_OK}")
    level = LEVEL[algorithm]
    P = model.plan
    if algorithm == "bp":
        init = init if init is not None else init_messages(model)
        if not isinstance(init, MessageSet):
            raise InvalidConfigError("bp starts from a MessageSet")
        state = init.state_vector()
        state_tabs = _message_offsets(model)
    else:
        init = init if init is not None else init_beliefs(model, level)
        if not isinstance(init, BeliefSet):
            raise InvalidConfigError(f"{algorithm} starts from a BeliefSet")
        _require_level(init, level, algorithm)
        state = init.state_vector()
        state_tabs = _table_offsets(model, level)
    obs_tabs = _table_offsets(model, level)
    obs_size = int(obs_tabs[-1])
    alpha = _alpha(model, level, weights)
    max_iter = int(config.max_iterations)
    (cur, obs, iterations, converged, trace, wtrace, status, region, clamps, period,
     detected_at, tail) = K.drive(
        KIND[algorithm], P, np.ascontiguousarray(state, dtype=np.float64), obs_size, state_tabs,
        obs_tabs, alpha, float(config.tolerance), max_iter, float(config.damping), sequential,
        float(config.clamp_epsilon), bool(record_wskl), bool(detect_cycles), TAIL_WINDOW)
    if status != K.OK:
        raise_for_status(model, status, region, cur, iteration=len(trace) + 1)
    beliefs = BeliefSet.from_vector(model, model.cardinalities, level, obs)
    trace = np.asarray(trace)
    amp = None
    if not converged and trace.size:
        last = trace[-TAIL_WINDOW:]
        amp = float(last.max() - last.min())
    tail_set = None
    if trace.size:
        tail_set = BeliefSet.from_vector(model, model.cardinalities, level,
                                         _renormalize(tail, obs_tabs))
    report = RunReport(
        algorithm=algorithm,
        iterations=int(iterations),
        converged=bool(converged),
        final_residual=float(trace[-1]) if trace.size else math.inf,
        residual_trace=trace,
        wskl_trace=np.asarray(wtrace) if record_wskl else None,
        oscillation_amplitude=amp,
        clamp_count=int(clamps),
        cycle_period=int(period),
        damping=float(config.damping),
        schedule=config.schedule,
        tail_average=tail_set,
        messages=MessageSet.from_vector(model, cur) if algorithm == "bp" else None,
    )
    return beliefs, report


def _renormalize(vec, tabs):
    out = np.array(vec, dtype=float)
    for a, b in zip(tabs[:-1], tabs[1:]):
        out[a:b] /= out[a:b].sum()
    return out


def time_average(report: RunReport) -> BeliefSet:
    """Mean of the observed tables over the last (up to) 100 iterations."""
    if report.tail_average is None:
        raise InvalidConfigError("run recorded no iterations")
    return report.tail_average


def level_of(algorithm_or_level) -> float:
    if isinstance(algorithm_or_level, str) and algorithm_or_level.lower() in LEVEL:
        return LEVEL[algorithm_or_level.lower()]
    return parse_level(algorithm_or_level)
