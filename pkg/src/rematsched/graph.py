"""Compute-graph data model, JSON ingestion and topological-order helpers."""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class GraphError(ValueError):
    """Raised when a graph document is malformed or not a DAG."""


@dataclass(frozen=True)
class ComputeGraph:
    """A DAG of compute nodes with dense integer ids ``0..n-1``.

    ``durations[v]`` is the cost of computing ``v`` and ``out_sizes[v]`` the
    size of the single tensor it produces. ``edges`` holds ``(u, v)`` pairs
    meaning ``v`` consumes the output of ``u``.
    """

    durations: tuple[int, ...]
    out_sizes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    names: tuple[str, ...] = ()
    preds: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    succs: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        n = len(self.durations)
        if n < 1:
            raise GraphError("graph must have at least one node")
        if len(self.out_sizes) != n:
            raise GraphError("durations and out_sizes differ in length")
        if not self.names:
            object.__setattr__(self, "names", tuple(str(i) for i in range(n)))
        elif len(self.names) != n:
            raise GraphError("names table does not match node count")
        if len(set(self.names)) != n:
            raise GraphError("duplicate node names")
        for v in range(n):
            _check_nonneg_int(self.durations[v], f"duration of node {self.names[v]!r}")
            _check_nonneg_int(self.out_sizes[v], f"out_size of node {self.names[v]!r}")
        edges = tuple(sorted((int(u), int(v)) for u, v in self.edges))
        seen = set()
        preds: list[list[int]] = [[] for _ in range(n)]
        succs: list[list[int]] = [[] for _ in range(n)]
        for u, v in edges:
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u}, {v}) has a dangling endpoint")
            if u == v:
                raise GraphError(f"self-loop on node {self.names[u]!r}")
            if (u, v) in seen:
                raise GraphError(f"duplicate edge ({self.names[u]!r}, {self.names[v]!r})")
            seen.add((u, v))
            preds[v].append(u)
            succs[u].append(v)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "preds", tuple(tuple(p) for p in preds))
        object.__setattr__(self, "succs", tuple(tuple(s) for s in succs))
        if _kahn(self, None) is None:
            raise GraphError("graph contains a directed cycle")

    @property
    def n(self) -> int:
        return len(self.durations)

    @property
    def node_count(self) -> int:
        return len(self.durations)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def total_duration(self) -> int:
        return sum(self.durations)

    def total_size(self) -> int:
        return sum(self.out_sizes)

    def with_weights(self, durations: Sequence[int], out_sizes: Sequence[int]) -> "ComputeGraph":
        return ComputeGraph(tuple(durations), tuple(out_sizes), self.edges, self.names)


def _check_nonneg_int(value: object, what: str) -> None:
    if isinstance(value, bool) or not isinstance(value, int):
        raise GraphError(f"{what} must be an integer, got {value!r}")
    if value < 0:
        raise GraphError(f"{what} must be nonnegative, got {value}")


def from_edges(
    n: int,
    edges: Iterable[tuple[int, int]],
    durations: Sequence[int] | None = None,
    out_sizes: Sequence[int] | None = None,
) -> ComputeGraph:
    """Build a graph with unit weights unless given explicitly."""
    d = tuple(durations) if durations is not None else (1,) * n
    s = tuple(out_sizes) if out_sizes is not None else (1,) * n
    return ComputeGraph(d, s, tuple(edges))


# --- JSON format -----------------------------------------------------------

_NODE_KEYS = {"id", "duration", "out_size"}
_EDGE_KEYS = {"from", "to"}


def load_graph(data: bytes | str) -> ComputeGraph:
    """Parse and validate a JSON graph document.

    Node ids are arbitrary strings; they are mapped to dense integers in the
    order the nodes appear, and the original names are kept on the graph.
    """
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise GraphError(f"cannot parse graph document: {exc}") from exc
    if not isinstance(doc, dict):
        raise GraphError("graph document must be a JSON object")
    extra = set(doc) - {"nodes", "edges"}
    if extra:
        raise GraphError(f"unknown top-level fields: {sorted(extra)}")
    if "nodes" not in doc or not isinstance(doc["nodes"], list):
        raise GraphError("'nodes' must be an array")
    raw_edges = doc.get("edges", [])
    if not isinstance(raw_edges, list):
        raise GraphError("'edges' must be an array")

    index: dict[str, int] = {}
    names, durations, sizes = [], [], []
    for entry in doc["nodes"]:
        if not isinstance(entry, dict) or set(entry) != _NODE_KEYS:
            raise GraphError(f"node entry must have exactly {sorted(_NODE_KEYS)}: {entry!r}")
        name = entry["id"]
        if not isinstance(name, str):
            raise GraphError(f"node id must be a string: {name!r}")
        if name in index:
            raise GraphError(f"duplicate node id {name!r}")
        index[name] = len(names)
        names.append(name)
        durations.append(entry["duration"])
        sizes.append(entry["out_size"])

    edges = []
    for entry in raw_edges:
        if not isinstance(entry, dict) or set(entry) != _EDGE_KEYS:
            raise GraphError(f"edge entry must have exactly {sorted(_EDGE_KEYS)}: {entry!r}")
        src, dst = entry["from"], entry["to"]
        for end in (src, dst):
            if end not in index:
                raise GraphError(f"edge endpoint {end!r} is not a declared node")
        edges.append((index[src], index[dst]))
    return ComputeGraph(tuple(durations), tuple(sizes), tuple(edges), tuple(names))


def graph_to_dict(g: ComputeGraph) -> dict:
    return {
        "nodes": [
            {"id": g.names[v], "duration": g.durations[v], "out_size": g.out_sizes[v]}
            for v in range(g.n)
        ],
        "edges": [{"from": g.names[u], "to": g.names[v]} for u, v in g.edges],
    }


def dumps_graph(g: ComputeGraph) -> str:
    """Canonical serialization; ``load_graph(dumps_graph(g)) == g``."""
    return json.dumps(graph_to_dict(g), indent=2) + "\n"


# --- topological orders ------------------------------------------------------


@dataclass(frozen=True)
class TopoOrder:
    """A permutation of node ids consistent with every edge.

    ``position[v]`` is the 1-based index of ``v`` in ``nodes``.
    """

    nodes: tuple[int, ...]
    position: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        pos = [0] * len(self.nodes)
        for j, v in enumerate(self.nodes, start=1):
            pos[v] = j
        object.__setattr__(self, "position", tuple(pos))

    def __len__(self) -> int:
        return len(self.nodes)

    def is_valid_for(self, g: ComputeGraph) -> bool:
        if sorted(self.nodes) != list(range(g.n)):
            return False
        return all(self.position[u] < self.position[v] for u, v in g.edges)


def _kahn(g: ComputeGraph, rng: random.Random | None) -> list[int] | None:
    indeg = [len(p) for p in g.preds]
    ready = [v for v in range(g.n) if indeg[v] == 0]
    order = []
    if rng is None:
        heapq.heapify(ready)
    while ready:
        if rng is None:
            v = heapq.heappop(ready)
        else:
            i = rng.randrange(len(ready))
            ready[i], ready[-1] = ready[-1], ready[i]
            v = ready.pop()
        order.append(v)
        for w in g.succs[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                if rng is None:
                    heapq.heappush(ready, w)
                else:
                    ready.append(w)
    return order if len(order) == g.n else None


def topological_order(g: ComputeGraph) -> TopoOrder:
    """Kahn's algorithm breaking ties by lowest node id."""
    return TopoOrder(tuple(_kahn(g, None)))


def random_topological_order(g: ComputeGraph, seed: int) -> TopoOrder:
    """Kahn's algorithm with ties broken uniformly at random by ``seed``."""
    return TopoOrder(tuple(_kahn(g, random.Random(seed))))


def all_topological_orders(g: ComputeGraph) -> list[TopoOrder]:
    """Every topological order; exponential, meant for tiny graphs."""
    indeg = [len(p) for p in g.preds]
    out: list[TopoOrder] = []
    prefix: list[int] = []

    def rec() -> None:
        if len(prefix) == g.n:
            out.append(TopoOrder(tuple(prefix)))
            return
        for v in range(g.n):
            if indeg[v] == 0 and v not in prefix:
                prefix.append(v)
                for w in g.succs[v]:
                    indeg[w] -= 1
                rec()
                for w in g.succs[v]:
                    indeg[w] += 1
                prefix.pop()

    rec()
    return out


def no_remat_peak_memory(g: ComputeGraph, order: TopoOrder | Sequence[int]) -> int:
    """Peak memory of running ``order`` once, freeing each tensor after its last use."""
    nodes = order.nodes if isinstance(order, TopoOrder) else tuple(order)
    pos = {v: k for k, v in enumerate(nodes)}
    release = [0] * len(nodes)  # memory freed after event k
    for k, v in enumerate(nodes):
        last = max((pos[w] for w in g.succs[v]), default=k)
        release[last] += g.out_sizes[v]
    live = peak = 0
    for k, v in enumerate(nodes):
        live += g.out_sizes[v]
        peak = max(peak, live)
        live -= release[k]
    return peak


def compute_lower_bound_memory(g: ComputeGraph) -> int:
    """Memory every schedule needs: a node's output plus all of its inputs."""
    return max(g.out_sizes[v] + sum(g.out_sizes[u] for u in g.preds[v]) for v in range(g.n))
