"""Weisfeiler-Lehman distance between labeled graphs and Markov chains.

The package computes the depth-k WL distance through its backward
transport recursion, cross-checks it against independent formulations
(nested labels, bicausal transport on path space, Markovian couplings),
and audits message-passing networks against it.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CapExceededError,
    LabeledGraph,
    LabelMetric,
    ValidationError,
    label_distance,
    parse_graph,
    permute_graph,
    serialize_graph,
)
from .markov import Lmmc, check_stationary, induce_eps_normalized, induce_q_damped  # noqa: E402
from .transport import Coupling, LpProblem, lp_solve, wasserstein  # noqa: E402
from .wl_distance import (  # noqa: E402
    classic_wl_refinement,
    graph_wl_distance,
    wl_distance,
    wl_distance_hierarchical,
)

__all__ = [
    "__version__",
    "CapExceededError",
    "LabeledGraph",
    "LabelMetric",
    "ValidationError",
    "label_distance",
    "parse_graph",
    "permute_graph",
    "serialize_graph",
    "Lmmc",
    "check_stationary",
    "induce_eps_normalized",
    "induce_q_damped",
    "Coupling",
    "LpProblem",
    "lp_solve",
    "wasserstein",
    "classic_wl_refinement",
    "graph_wl_distance",
    "wl_distance",
    "wl_distance_hierarchical",
]
