"""Synthetic benchmark graphs and exhaustive small-DAG enumeration."""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass

from .graph import ComputeGraph, from_edges

MAX_ENUMERATED_NODES = 5


@dataclass(frozen=True)
class LayeredSpec:
    """Parameters of a random layered DAG.

    Nodes are spread over ``layer_count`` layers (each layer gets at least one
    node). A node draws an edge from every node of the previous layer with
    probability ``p_local`` and from every node of older layers with
    probability ``p_skip``; a node left without inputs gets one edge from a
    random node of the previous layer.
    """

    node_count: int
    layer_count: int
    p_local: float = 0.3
    p_skip: float = 0.02
    duration_range: tuple[int, int] = (1, 100)
    size_range: tuple[int, int] = (1, 1000)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.layer_count < 1:
            raise ValueError("layer_count must be >= 1")
        if self.node_count < self.layer_count:
            raise ValueError("need at least one node per layer")
        for p in (self.p_local, self.p_skip):
            if not 0.0 <= p <= 1.0:
                raise ValueError("edge probabilities must lie in [0, 1]")
        for lo, hi in (self.duration_range, self.size_range):
            if lo < 0 or hi < lo:
                raise ValueError("weight ranges must satisfy 0 <= lo <= hi")


def _layer_sizes(spec: LayeredSpec, rng: random.Random) -> list[int]:
    sizes = [1] * spec.layer_count
    for _ in range(spec.node_count - spec.layer_count):
        sizes[rng.randrange(spec.layer_count)] += 1
    return sizes


def random_layered(spec: LayeredSpec) -> ComputeGraph:
    rng = random.Random(spec.seed)
    layers: list[list[int]] = []
    nid = 0
    for size in _layer_sizes(spec, rng):
        layers.append(list(range(nid, nid + size)))
        nid += size
    edges = []
    older: list[int] = []
    for l in range(1, len(layers)):
        prev = layers[l - 1]
        for v in layers[l]:
            preds = [u for u in prev if rng.random() < spec.p_local]
            preds += [u for u in older if rng.random() < spec.p_skip]
            if not preds:
                preds = [rng.choice(prev)]
            edges.extend((u, v) for u in preds)
        older.extend(prev)
    n = spec.node_count
    durations = [rng.randint(*spec.duration_range) for _ in range(n)]
    sizes = [rng.randint(*spec.size_range) for _ in range(n)]
    return ComputeGraph(tuple(durations), tuple(sizes), tuple(edges))


def layered_spec_for(node_count: int, edge_count: int, seed: int = 0, **kwargs) -> LayeredSpec:
    """A spec whose expected edge count is close to ``edge_count``.

    Uses about five nodes per layer up to 200 nodes and ten beyond, keeps
    ``p_local`` fixed and solves for ``p_skip`` in expectation.
    """
    per = 5 if node_count <= 200 else 10
    layer_count = max(1, node_count // per)
    p_local = kwargs.pop("p_local", 0.3)
    avg = node_count / layer_count
    local = sum(avg * p_local for _ in range(1, layer_count)) * avg
    skip_slots = sum(avg * max(0, l - 1) for l in range(1, layer_count)) * avg
    p_skip = 0.0 if skip_slots == 0 else max(0.0, min(1.0, (edge_count - local) / skip_slots))
    return LayeredSpec(node_count, layer_count, p_local, p_skip, seed=seed, **kwargs)


def chain(n: int, duration: int = 1, size: int = 1) -> ComputeGraph:
    return from_edges(n, [(i, i + 1) for i in range(n - 1)], [duration] * n, [size] * n)


def u_net(depth: int, duration: int = 1, size: int = 1) -> ComputeGraph:
    """Encoder chain, bottleneck, decoder chain, with a skip from each encoder level
    to the decoder level that mirrors it."""
    n = 2 * depth + 1
    edges = [(i, i + 1) for i in range(n - 1)]
    edges += [(i, n - 1 - i) for i in range(depth) if n - 1 - i != i + 1]
    return from_edges(n, edges, [duration] * n, [size] * n)


def _connected(n: int, edges: list[tuple[int, int]]) -> bool:
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges:
        parent[find(u)] = find(v)
    return len({find(x) for x in range(n)}) == 1


def _acyclic(n: int, edges: list[tuple[int, int]]) -> bool:
    indeg = [0] * n
    succ: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        indeg[v] += 1
        succ[u].append(v)
    stack = [v for v in range(n) if indeg[v] == 0]
    seen = 0
    while stack:
        u = stack.pop()
        seen += 1
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                stack.append(v)
    return seen == n


def enumerate_small_dags(max_n: int) -> list[ComputeGraph]:
    """All connected labeled DAGs on 1..max_n nodes, with unit weights."""
    if not 1 <= max_n <= MAX_ENUMERATED_NODES:
        raise ValueError(f"max_n must be in 1..{MAX_ENUMERATED_NODES}")
    out = []
    for n in range(1, max_n + 1):
        pairs = list(itertools.combinations(range(n), 2))
        for choice in itertools.product((0, 1, 2), repeat=len(pairs)):
            edges = []
            for (a, b), c in zip(pairs, choice):
                if c == 1:
                    edges.append((a, b))
                elif c == 2:
                    edges.append((b, a))
            if _connected(n, edges) and _acyclic(n, edges):
                out.append(from_edges(n, edges))
    return out


def random_weights(g: ComputeGraph, seed: int, duration_range=(1, 9), size_range=(1, 4)) -> ComputeGraph:
    rng = random.Random(seed)
    d = [rng.randint(*duration_range) for _ in range(g.n)]
    s = [rng.randint(*size_range) for _ in range(g.n)]
    return g.with_weights(d, s)
