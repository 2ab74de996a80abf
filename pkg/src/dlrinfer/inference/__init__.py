"""Approximate inference by reduced DLR fixed points and the diagnostics around them."""

from .beliefs import BeliefSet, MessageSet, init_beliefs, init_messages
from .diagnostics import (
    WsklWeights,
    bethe_embedding,
    bethe_free_energy,
    dlr_residual,
    reparameterization_spread,
    wskl,
)
from .engine import (
    ALGORITHMS,
    RunConfig,
    RunReport,
    beliefs_from_messages,
    bp_dlr_step,
    bp_message_step,
    cp_step,
    fn2_step,
    fn_step,
    mf2_step,
    mf_step,
    run_to_convergence,
    time_average,
)
