"""Dijkstra and Yen's K shortest loopless paths over a cost-map snapshot.

Equal-cost paths are ordered by their switch sequence, then by link ids,
which makes every result reproducible and gives ``yen_ksp(K')`` as a prefix
of ``yen_ksp(K)``.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

from .errors import TopologyError
from .linkstate import CostMap, Edge, Topology, path_cost


@dataclass(frozen=True)
class Path:
    switches: tuple[str, ...]
    edges: tuple[Edge, ...]
    total_cost: float
    bottleneck_ab: float
    total_latency: float

    @property
    def order_key(self):
        return (self.total_cost, self.switches, tuple(e.lid for e in self.edges))

    def next_hop(self, switch: str) -> Edge | None:
        """Outgoing edge at ``switch``; None at the last switch or off-path."""
        for e in self.edges:
            if e.u == switch:
                return e
        return None

    def __str__(self):
        return "-".join(self.switches)


def make_path(src: str, edges, cost_map: CostMap) -> Path:
    edges = tuple(edges)
    switches = (src,) + tuple(e.v for e in edges)
    return Path(
        switches=switches,
        edges=edges,
        total_cost=path_cost(edges, cost_map),
        bottleneck_ab=min((cost_map.ab[e] for e in edges), default=math.inf),
        total_latency=sum(cost_map.latency[e] for e in edges),
    )


def _adjacency(topology) -> dict[str, list[Edge]]:
    if isinstance(topology, Topology):
        return topology.adjacency()
    return topology


def dijkstra(topology, cost_map: CostMap, src: str, dst: str,
             excluded_edges=(), excluded_nodes=()) -> Path | None:
    """Cheapest path avoiding the exclusions, or None when disconnected.

    ``topology`` may be a :class:`Topology` or a prebuilt adjacency map.
    Links with infinite cost are unusable.
    """
    adj = _adjacency(topology)
    for s in (src, dst):
        if s not in adj:
            raise TopologyError(f"unknown switch {s}")
    if src in excluded_nodes:
        return None
    if src == dst:
        return make_path(src, (), cost_map)
    costs = cost_map.costs
    excluded_edges = set(excluded_edges)
    excluded_nodes = set(excluded_nodes)
    # labels compare as (cost, switch sequence, link ids)
    heap = [(0.0, (src,), (), ())]
    settled = set()
    while heap:
        cost, nodes, lids, edges = heapq.heappop(heap)
        u = nodes[-1]
        if u in settled:
            continue
        settled.add(u)
        if u == dst:
            return make_path(src, edges, cost_map)
        for e in adj[u]:
            if e.v in settled or e.v in excluded_nodes or e in excluded_edges:
                continue
            c = costs[e]
            if math.isinf(c):
                continue
            heapq.heappush(heap, (cost + c, nodes + (e.v,), lids + (e.lid,), edges + (e,)))
    return None


def yen_ksp(topology, cost_map: CostMap, src: str, dst: str, k: int) -> list[Path]:
    """Up to ``k`` loopless paths in nondecreasing cost order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    adj = _adjacency(topology)
    first = dijkstra(adj, cost_map, src, dst)
    if first is None:
        return []
    accepted = [first]
    seen = {first.edges}
    candidates: dict[tuple, Path] = {}
    while len(accepted) < k:
        prev = accepted[-1]
        for i in range(len(prev.edges)):
            spur = prev.switches[i]
            root = prev.edges[:i]
            blocked = {p.edges[i] for p in accepted
                       if len(p.edges) > i and p.edges[:i] == root}
            spur_path = dijkstra(adj, cost_map, spur, dst, blocked, prev.switches[:i])
            if spur_path is None:
                continue
            edges = root + spur_path.edges
            if edges not in seen and edges not in candidates:
                candidates[edges] = make_path(src, edges, cost_map)
        if not candidates:
            break
        best = min(candidates.values(), key=lambda p: p.order_key)
        del candidates[best.edges]
        accepted.append(best)
        seen.add(best.edges)
    return accepted
