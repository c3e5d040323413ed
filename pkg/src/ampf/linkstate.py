"""Topology, per-link measurements and the latency/bandwidth link cost."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

from .errors import (AdmissionRefused, DegenerateNetwork, MeasurementError,
                     TopologyError)

UNUSABLE = math.inf
# slack for float reservation bookkeeping, bits/s
_BW_EPS = 1e-6


def latency_from_probes(t_total: float, t_s1: float, t_s2: float) -> float:
    """One-way link latency from a controller->s1->s2->controller trip time
    and the two controller<->switch round trips."""
    if t_total <= 0 or t_s1 <= 0 or t_s2 <= 0:
        raise MeasurementError("probe times must be positive")
    lat = t_total - t_s1 / 2 - t_s2 / 2
    if lat <= 0:
        raise MeasurementError(
            f"inconsistent probe: total={t_total} s1={t_s1} s2={t_s2} gives {lat}")
    return lat


def normalized_ab(ab: Mapping) -> dict:
    """Scale available bandwidths by the network-wide maximum."""
    if not ab:
        raise DegenerateNetwork("no links")
    top = max(ab.values())
    if top <= 0:
        raise DegenerateNetwork("every link has zero available bandwidth")
    return {k: v / top for k, v in ab.items()}


def link_cost(latency_s: float, nab: float, lambda_a: float = 1.0,
              lambda_b: float = 1.0) -> float:
    """``lambda_a * latency[ms] + lambda_b / nab``; UNUSABLE when nab is 0."""
    if nab <= 0:
        return UNUSABLE
    return lambda_a * (latency_s * 1e3) + lambda_b * (1.0 / nab)


def path_cost(edges: Iterable, cost_map) -> float:
    costs = cost_map.costs if hasattr(cost_map, "costs") else cost_map
    total = 0.0
    for e in edges:
        try:
            total += costs[e]
        except KeyError:
            raise TopologyError(f"edge {e} not in cost map") from None
    return total


class Edge(NamedTuple):
    """Directed switch-to-switch edge; ``lid`` disambiguates parallel links."""

    u: str
    v: str
    lid: str

    def reverse(self) -> Edge:
        return Edge(self.v, self.u, self.lid)

    def __str__(self):
        return f"{self.u}-{self.v}"


@dataclass(frozen=True)
class Link:
    lid: str
    a: str
    b: str
    capacity: float       # bits/s
    base_latency: float   # seconds

    def __post_init__(self):
        if self.a == self.b:
            raise TopologyError(f"self-loop on {self.a}")
        if self.capacity <= 0 or self.base_latency <= 0:
            raise TopologyError(f"link {self.lid}: capacity and latency must be > 0")


@dataclass
class Topology:
    switches: set = field(default_factory=set)
    hosts: dict = field(default_factory=dict)   # host -> attachment switch
    links: dict = field(default_factory=dict)   # lid -> Link

    def add_switch(self, sw: str) -> None:
        self.switches.add(sw)

    def add_link(self, a: str, b: str, capacity: float, latency: float,
                 lid: str | None = None) -> Link:
        lid = lid or f"L{len(self.links)}"
        if lid in self.links:
            raise TopologyError(f"duplicate link id {lid}")
        link = Link(lid, a, b, capacity, latency)
        self.links[lid] = link
        return link

    def add_host(self, host: str, switch: str, capacity: float = 1e9,
                 latency: float = 5e-5) -> Link:
        if host in self.hosts:
            raise TopologyError(f"host {host} already attached")
        self.hosts[host] = switch
        return self.add_link(host, switch, capacity, latency, lid=f"{host}-{switch}")

    def host_link(self, host: str) -> Link:
        sw = self.hosts[host]
        return self.links[f"{host}-{sw}"]

    def switch_links(self) -> list[Link]:
        return [l for l in self.links.values()
                if l.a in self.switches and l.b in self.switches]

    def edges(self) -> list[Edge]:
        out = []
        for l in self.switch_links():
            out.append(Edge(l.a, l.b, l.lid))
            out.append(Edge(l.b, l.a, l.lid))
        return sorted(out)

    def adjacency(self) -> dict[str, list[Edge]]:
        adj = {s: [] for s in sorted(self.switches)}
        for e in self.edges():
            adj[e.u].append(e)
        return adj

    def link_of(self, edge: Edge) -> Link:
        return self.links[edge.lid]

    def validate(self) -> None:
        for l in self.links.values():
            for end in (l.a, l.b):
                if end not in self.switches and end not in self.hosts:
                    raise TopologyError(f"link {l.lid} references unknown node {end}")
        for h, sw in self.hosts.items():
            if sw not in self.switches:
                raise TopologyError(f"host {h} attached to unknown switch {sw}")
            attached = [l for l in self.links.values() if h in (l.a, l.b)]
            if len(attached) != 1:
                raise TopologyError(f"host {h} must have exactly one link")


def load_topology(path) -> Topology:
    """Parse the text topology format.

    ``switch <id>``, ``host <id> <switch>`` and
    ``link <a> <b> <capacity_bps> <latency_s>``; ``#`` starts a comment. A
    host's link to its switch is given by an ordinary ``link`` line; when
    omitted a 1 Gbps / 50 us link is assumed.
    """
    topo = Topology()
    host_lines = []
    link_lines = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "switch" and len(parts) == 2:
                topo.add_switch(parts[1])
            elif parts[0] == "host" and len(parts) == 3:
                host_lines.append((parts[1], parts[2]))
            elif parts[0] == "link" and len(parts) == 5:
                link_lines.append((parts[1], parts[2], float(parts[3]), float(parts[4])))
            else:
                raise ValueError(f"unrecognised line {line!r}")
        except ValueError as exc:
            raise TopologyError(f"{path}:{lineno}: {exc}") from None
    hosts = dict(host_lines)
    explicit = {}
    for a, b, cap, lat in link_lines:
        if a in hosts or b in hosts:
            h, sw = (a, b) if a in hosts else (b, a)
            if hosts[h] != sw:
                raise TopologyError(f"host {h} linked to {sw}, declared on {hosts[h]}")
            explicit[h] = (cap, lat)
        else:
            topo.add_link(a, b, cap, lat, lid=f"{a}-{b}" if f"{a}-{b}" not in topo.links else None)
    for h, sw in host_lines:
        cap, lat = explicit.get(h, (1e9, 5e-5))
        topo.add_host(h, sw, cap, lat)
    topo.validate()
    return topo


def dump_topology(topo: Topology) -> str:
    lines = [f"switch {s}" for s in sorted(topo.switches)]
    lines += [f"host {h} {sw}" for h, sw in sorted(topo.hosts.items())]
    for l in topo.links.values():
        lines.append(f"link {l.a} {l.b} {l.capacity:.17g} {l.base_latency:.17g}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CostMap:
    """Immutable snapshot used by pathfinding."""

    costs: Mapping[Edge, float]
    ab: Mapping[Edge, float]
    latency: Mapping[Edge, float]
    lambda_a: float = 1.0
    lambda_b: float = 1.0
    refresh_epoch: float = 100.0
    computed_at: float = 0.0


class LinkState:
    """Per-directed-edge latency, background load and reservations.

    Only the controller mutates it; pathfinding reads :class:`CostMap`
    snapshots produced by :meth:`refresh`.
    """

    def __init__(self, topology: Topology, lambda_a: float = 1.0,
                 lambda_b: float = 1.0, refresh_epoch: float = 100.0):
        self.topology = topology
        self.lambda_a = lambda_a
        self.lambda_b = lambda_b
        self.refresh_epoch = refresh_epoch
        self.edges = topology.edges()
        self.capacity = {e: topology.link_of(e).capacity for e in self.edges}
        self.latency = {e: topology.link_of(e).base_latency for e in self.edges}
        self.background = {e: 0.0 for e in self.edges}
        self.reservations: dict[Edge, dict] = {e: {} for e in self.edges}
        self.discarded_probes = 0
        self.stale = True
        self._cost_map: CostMap | None = None

    def reserved(self, edge: Edge) -> float:
        return sum(self.reservations[edge].values())

    def available(self, edge: Edge) -> float:
        ab = self.capacity[edge] - self.reserved(edge) - self.background[edge]
        return max(0.0, ab)

    def reserve(self, edge: Edge, owner, amount: float) -> None:
        if amount < 0:
            raise ValueError("negative reservation")
        if amount > self.available(edge) + _BW_EPS:
            raise AdmissionRefused(f"{edge}: {amount:.0f} b/s exceeds available bandwidth")
        book = self.reservations[edge]
        book[owner] = book.get(owner, 0.0) + amount
        self.stale = True

    def release(self, edge: Edge, owner, amount: float | None = None) -> None:
        book = self.reservations[edge]
        held = book.get(owner, 0.0)
        amount = held if amount is None else amount
        if amount > held + _BW_EPS:
            raise ValueError(f"{edge}: releasing {amount} but {owner} holds {held}")
        left = held - amount
        if left <= _BW_EPS:
            book.pop(owner, None)
        else:
            book[owner] = left
        self.stale = True

    def reserve_path(self, edges, owner, amount: float) -> None:
        """All-or-nothing reservation along a path."""
        done = []
        try:
            for e in edges:
                self.reserve(e, owner, amount)
                done.append(e)
        except AdmissionRefused:
            for e in done:
                self.release(e, owner, amount)
            raise

    def release_owner(self, owner) -> None:
        for e in self.edges:
            if owner in self.reservations[e]:
                self.release(e, owner)

    def record_latency(self, edge: Edge, latency: float) -> None:
        self.latency[edge] = latency
        self.stale = True

    def ingest_probe(self, edge: Edge, t_total: float, t_s1: float, t_s2: float) -> bool:
        """Apply a probe measurement; inconsistent probes keep the old value."""
        try:
            lat = latency_from_probes(t_total, t_s1, t_s2)
        except MeasurementError:
            self.discarded_probes += 1
            return False
        self.record_latency(edge, lat)
        return True

    def set_background(self, edge: Edge, rate: float) -> None:
        self.background[edge] = max(0.0, rate)
        self.stale = True

    def refresh(self, now: float = 0.0) -> CostMap:
        ab = {e: self.available(e) for e in self.edges}
        try:
            nab = normalized_ab(ab)
        except DegenerateNetwork:
            nab = {e: 0.0 for e in self.edges}
        costs = {e: link_cost(self.latency[e], nab[e], self.lambda_a, self.lambda_b)
                 for e in self.edges}
        self._cost_map = CostMap(costs, ab, dict(self.latency), self.lambda_a,
                                 self.lambda_b, self.refresh_epoch, now)
        self.stale = False
        return self._cost_map

    @property
    def cost_map(self) -> CostMap:
        if self._cost_map is None:
            return self.refresh()
        return self._cost_map
