"""Local-consistency (DLR) inference on pairwise Markov random fields."""

from .errors import DLRError
from .exact import exact_marginals, partition_function
from .inference import ALGORITHMS, RunConfig, run_to_convergence
from .model import (
    InstanceConfig,
    IsingParams,
    PairwiseModel,
    Region,
    Topology,
    build_ising,
    load_model,
    random_ising_instance,
    save_model,
    torus_grid,
)

__version__ = "0.1.0"
