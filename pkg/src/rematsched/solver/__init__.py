"""Search machinery: propagators, branch-and-bound, heuristics and the two-phase driver."""

from .driver import SolveConfig, SolveReport, Status, phase1, solve, trace_csv
from .search import BranchAndBound
from .state import PruneResult, SearchState, check_reservoir, propagate_cumulative

__all__ = [
    "BranchAndBound",
    "PruneResult",
    "SearchState",
    "SolveConfig",
    "SolveReport",
    "Status",
    "check_reservoir",
    "phase1",
    "propagate_cumulative",
    "solve",
    "trace_csv",
]
