"""Memory-budgeted rematerialization scheduling for compute graphs."""

from .graph import ComputeGraph, TopoOrder, load_graph, no_remat_peak_memory, random_topological_order
from .model import IntervalSolution, RematProblem, build_model, build_staged_model, to_phase1

__version__ = "0.1.0"

__all__ = [
    "ComputeGraph",
    "IntervalSolution",
    "RematProblem",
    "TopoOrder",
    "build_model",
    "build_staged_model",
    "load_graph",
    "no_remat_peak_memory",
    "random_topological_order",
    "to_phase1",
]
