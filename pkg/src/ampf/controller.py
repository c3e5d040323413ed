"""Application-aware multipath forwarding controller.

New flows are forwarded on a provisional (median-cost) path while the
controller observes their first packets. Once enough packets are seen the
flow is classified and moved to a path picked from the feasible subset of
the K shortest paths according to its class. Shortly before the rules'
hard timeout the controller audits the flow's throughput and either
refreshes the rules or reroutes it.

The controller is a single serial event handler. It never touches the data
plane directly: every handler returns a list of actions for the caller (the
simulator, or a test) to apply.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Union

from . import classifier
from .errors import AdmissionRefused, NoFeasiblePath, Unreachable
from .flows import (BACKWARD, CLASS_TABLE, N_CLASSES, AppClass, FlowKey,
                    FlowRecord, PacketRecord, extract_features, key_of,
                    update_flow)
from .linkstate import Edge, LinkState, Topology
from .paths import Path, dijkstra, yen_ksp

AWARE = "aware"
UNAWARE = "unaware"
KEEP = "keep"
REROUTE = "reroute"

NextHop = Union[Edge, str]  # a switch edge, or the destination host id


@dataclass
class PolicyConfig:
    n_observe: int = 50
    k: int = 8
    hard_timeout: float = 100.0
    epoch_check_offset: float = 10.0
    class_table: dict = field(default_factory=lambda: dict(CLASS_TABLE))
    lambda_a: float = 1.0
    lambda_b: float = 1.0
    n_classes: int = N_CLASSES
    # one-way controller<->switch latency applied to packet-outs and installs
    control_latency: float = 0.001
    provisional_priority: int = 10
    classified_priority: int = 20

    def __post_init__(self):
        if self.epoch_check_offset >= self.hard_timeout:
            raise ValueError("epoch_check_offset must be below hard_timeout")
        if self.n_observe < 2:
            raise ValueError("n_observe must be >= 2")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class FlowRule:
    switch: str
    match: FlowKey
    next_hop: NextHop
    priority: int
    hard_timeout: float
    install_ts: float

    @property
    def expiry(self) -> float:
        return self.install_ts + self.hard_timeout

    def expired(self, now: float) -> bool:
        return now >= self.expiry


class FlowTable:
    """Match table of one switch."""

    def __init__(self):
        self._rules: dict[FlowKey, list[FlowRule]] = {}
        # key -> (winning rule, time until which that answer holds)
        self._best: dict[FlowKey, tuple] = {}

    def install(self, rule: FlowRule) -> None:
        self._rules.setdefault(rule.match, []).append(rule)
        self._best.pop(rule.match, None)

    def lookup(self, key: FlowKey, now: float) -> FlowRule | None:
        cached = self._best.get(key)
        if cached is not None and now < cached[1]:
            return cached[0]
        rules = self._rules.get(key)
        if not rules:
            return None
        best = None
        live = []
        for r in rules:
            if now >= r.install_ts + r.hard_timeout:
                continue
            live.append(r)
            if best is None or (r.priority, r.install_ts) > (best.priority, best.install_ts):
                best = r
        if live:
            self._rules[key] = live
            self._best[key] = (best, min(r.install_ts + r.hard_timeout for r in live))
        else:
            del self._rules[key]
            self._best.pop(key, None)
        return best

    def rules(self, key: FlowKey | None = None) -> list[FlowRule]:
        if key is not None:
            return list(self._rules.get(key, ()))
        return [r for rs in self._rules.values() for r in rs]


# Actions returned to the data plane.

@dataclass(frozen=True)
class PacketOut:
    packet: PacketRecord
    switch: str
    next_hop: NextHop
    at: float


@dataclass(frozen=True)
class InstallRule:
    rule: FlowRule


@dataclass(frozen=True)
class Drop:
    packet: PacketRecord
    switch: str
    reason: str


@dataclass(frozen=True)
class Timer:
    at: float
    kind: str
    key: FlowKey | None


@dataclass
class ActiveFlowEntry:
    key: FlowKey
    protocol: str = "udp"
    app_class: AppClass | None = None
    current_path: Path | None = None
    provisional: bool = True
    packets_observed: int = 0
    record: FlowRecord | None = None
    installed_rules: list = field(default_factory=list)
    reserved_bw: float = 0.0
    achieved_throughput: float = 0.0
    generation: int = 0
    fallback: bool = False
    ended: bool = False
    last_check_ts: float = 0.0
    last_check_bytes: int = 0
    reroutes: int = 0

    @property
    def label(self):
        return self.app_class.label if self.app_class else None


def select_index(label: int, n_feasible: int, n_classes: int = N_CLASSES) -> int:
    """0-based index into the cost-ordered feasible list for a class.

    The class interval is ``n_feasible / n_classes``; class ``label`` takes
    ``floor((label - 1) * interval)``, clamped to the last path.
    """
    if n_feasible < 1:
        raise NoFeasiblePath("empty feasible set")
    if not 1 <= label <= n_classes:
        raise ValueError(f"class label {label} outside 1..{n_classes}")
    return min((label - 1) * n_feasible // n_classes, n_feasible - 1)


def class_interval(n_feasible: int, n_classes: int = N_CLASSES) -> float:
    return n_feasible / n_classes


def feasible_paths(paths: list[Path], app_class: AppClass) -> list[Path]:
    """Paths with enough bottleneck bandwidth and, unless best effort,
    latency within the class bound. Order is preserved."""
    out = []
    for p in paths:
        if p.bottleneck_ab < app_class.min_bw:
            continue
        if not app_class.best_effort and p.total_latency > app_class.acceptable_delay:
            continue
        out.append(p)
    return out


def median_index(n: int) -> int:
    """0-based position of element ceil(n/2) (1-based)."""
    return (n + 1) // 2 - 1


class EventLog:
    def __init__(self):
        self.lines: list[str] = []

    def record(self, t: float, kind: str, key=None, cls=None, path=None, reason=""):
        self.lines.append("%.6f %s %s class=%s path=%s reason=%s" % (
            t, kind, key if key is not None else "-",
            cls if cls is not None else "-",
            path if path is not None else "-",
            reason.replace(" ", "_") if reason else "-"))

    def text(self) -> str:
        return "\n".join(self.lines) + ("\n" if self.lines else "")

    def __iter__(self):
        return iter(self.lines)

    def __len__(self):
        return len(self.lines)


class Controller:
    def __init__(self, topology: Topology, policy: PolicyConfig | None = None,
                 mode: str = AWARE, tree=None, seed: int = 0,
                 flow_stats: Callable[[FlowKey], int] | None = None):
        if mode not in (AWARE, UNAWARE):
            raise ValueError(f"mode must be {AWARE!r} or {UNAWARE!r}")
        if mode == AWARE and tree is None:
            raise ValueError("aware mode needs a trained classifier")
        self.topology = topology
        self.policy = policy or PolicyConfig()
        self.mode = mode
        self.tree = tree if mode == AWARE else None
        self.rng = random.Random(f"unaware-path:{seed}")
        self.flow_stats = flow_stats or (lambda key: 0)
        self.linkstate = LinkState(topology, self.policy.lambda_a, self.policy.lambda_b,
                                   refresh_epoch=self.policy.hard_timeout)
        self.adjacency = topology.adjacency()
        self.entries: dict[FlowKey, ActiveFlowEntry] = {}
        self.log = EventLog()
        self.classifications = 0

    # -- path computation -------------------------------------------------

    def k_paths(self, src_sw: str, dst_sw: str, now: float = 0.0) -> list[Path]:
        cost_map = self.linkstate.refresh(now)
        return yen_ksp(self.adjacency, cost_map, src_sw, dst_sw, self.policy.k)

    def provisional_path(self, src_sw: str, dst_sw: str, now: float = 0.0) -> Path:
        paths = self.k_paths(src_sw, dst_sw, now)
        if not paths:
            raise Unreachable(f"no path {src_sw} -> {dst_sw}")
        return paths[median_index(len(paths))]

    def _switches_of(self, key: FlowKey) -> tuple[str, str]:
        return self.topology.hosts[key.src_host], self.topology.hosts[key.dst_host]

    # -- rule handling ----------------------------------------------------

    def _rules_for(self, key: FlowKey, path: Path, priority: int, at: float,
                   skip_source: bool = False) -> list[FlowRule]:
        rules = []
        for i, sw in enumerate(path.switches):
            if skip_source and i == 0:
                continue
            hop = path.edges[i] if i < len(path.edges) else key.dst_host
            rules.append(FlowRule(sw, key, hop, priority, self.policy.hard_timeout, at))
        return rules

    def _install(self, entry: ActiveFlowEntry, rules: list[FlowRule]) -> list:
        entry.installed_rules.extend(rules)
        actions = [InstallRule(r) for r in rules]
        if rules:
            actions.append(Timer(rules[0].expiry, "expire", entry.key))
        return actions

    def _next_hop(self, entry: ActiveFlowEntry, switch: str) -> NextHop:
        dst_sw = self.topology.hosts[entry.key.dst_host]
        if switch == dst_sw:
            return entry.key.dst_host
        path = entry.current_path
        if path is not None and switch in path.switches:
            hop = path.next_hop(switch)
            if hop is not None:
                return hop
        detour = dijkstra(self.adjacency, self.linkstate.cost_map, switch, dst_sw)
        if detour is None or not detour.edges:
            raise Unreachable(f"no route from {switch} to {dst_sw}")
        return detour.edges[0]

    # -- packet-in ----------------------------------------------------------

    def handle_packet_in(self, pkt: PacketRecord, switch: str, now: float,
                         protocol: str = "udp") -> list:
        key = key_of(pkt)
        entry = self.entries.get(key)
        out_at = now + self.policy.control_latency
        if pkt.direction == BACKWARD:
            if entry is not None and entry.provisional and entry.record is not None:
                entry.record = update_flow(entry.record, pkt)
            return []
        try:
            if entry is None:
                return self._new_flow(pkt, key, switch, now, protocol)
            if self.mode == UNAWARE:
                return self._unaware_packet(entry, pkt, switch, now)
            if entry.provisional:
                return self._observe(entry, pkt, switch, now)
            actions = []
            if not self._has_live_rules(entry, now) and switch == entry.current_path.switches[0]:
                rules = self._rules_for(key, entry.current_path, self._priority(entry), out_at)
                actions += self._install(entry, rules)
                actions.append(Timer(out_at + self.policy.hard_timeout
                                     - self.policy.epoch_check_offset, "epoch", key))
                self.log.record(now, "reinstall", key, entry.label, entry.current_path)
            actions.append(PacketOut(pkt, switch, self._next_hop(entry, switch), out_at))
            return actions
        except Unreachable as exc:
            self.log.record(now, "unreachable", key, reason=str(exc))
            return [Drop(pkt, switch, "unreachable")]

    def _has_live_rules(self, entry: ActiveFlowEntry, now: float) -> bool:
        return any(not r.expired(now) for r in entry.installed_rules)

    def _priority(self, entry: ActiveFlowEntry) -> int:
        return self.policy.classified_priority + entry.generation

    def _new_flow(self, pkt, key, switch, now, protocol) -> list:
        src_sw, dst_sw = self._switches_of(key)
        entry = ActiveFlowEntry(key=key, protocol=protocol, record=FlowRecord(key))
        out_at = now + self.policy.control_latency
        if self.mode == UNAWARE:
            paths = self.k_paths(src_sw, dst_sw, now)
            if not paths:
                raise Unreachable(f"no path {src_sw} -> {dst_sw}")
            self.entries[key] = entry
            entry.provisional = False
            return self._unaware_assign(entry, paths, now) + [
                PacketOut(pkt, switch, self._next_hop(entry, switch), out_at)]
        path = self.provisional_path(src_sw, dst_sw, now)
        self.entries[key] = entry
        entry.current_path = path
        entry.record = update_flow(entry.record, pkt)
        entry.packets_observed = 1
        rules = self._rules_for(key, path, self.policy.provisional_priority, out_at,
                                skip_source=True)
        self.log.record(now, "provisional", key, None, path)
        return self._install(entry, rules) + [
            PacketOut(pkt, switch, self._next_hop(entry, switch), out_at)]

    def _observe(self, entry: ActiveFlowEntry, pkt, switch, now) -> list:
        entry.record = update_flow(entry.record, pkt)
        entry.packets_observed += 1
        actions = []
        if entry.packets_observed >= self.policy.n_observe:
            actions += self.classify_and_assign(entry, now)
        out_at = now + self.policy.control_latency
        actions.append(PacketOut(pkt, switch, self._next_hop(entry, switch), out_at))
        return actions

    # -- classification and placement ----------------------------------------

    def classify_and_assign(self, entry: ActiveFlowEntry, now: float) -> list:
        fv = extract_features(entry.record)
        label = classifier.predict(self.tree, fv)
        self.classifications += 1
        entry.app_class = self.policy.class_table[label]
        entry.provisional = False
        self.log.record(now, "classified", entry.key, label, entry.current_path)
        return self._place(entry, now)

    def assign_path(self, entry: ActiveFlowEntry, app_class: AppClass,
                    feasible: list[Path], now: float) -> Path:
        """Reserve the class's bandwidth on the class-interval path, moving to
        costlier feasible paths if the reservation is refused."""
        start = select_index(app_class.label, len(feasible), self.policy.n_classes)
        for path in feasible[start:]:
            try:
                self.linkstate.reserve_path(path.edges, entry.key, app_class.min_bw)
            except AdmissionRefused:
                continue
            entry.reserved_bw = app_class.min_bw
            entry.fallback = False
            return path
        raise NoFeasiblePath(f"no admissible path for {entry.key}")

    def _place(self, entry: ActiveFlowEntry, now: float, avoid: Path | None = None) -> list:
        src_sw, dst_sw = self._switches_of(entry.key)
        paths = self.k_paths(src_sw, dst_sw, now)
        if not paths:
            raise Unreachable(f"no path {src_sw} -> {dst_sw}")
        feasible = feasible_paths(paths, entry.app_class)
        if avoid is not None and any(p.edges != avoid.edges for p in feasible):
            feasible = [p for p in feasible if p.edges != avoid.edges]
        try:
            path = self.assign_path(entry, entry.app_class, feasible, now)
            reason = f"feasible={len(feasible)}"
            kind = "assign"
        except NoFeasiblePath:
            path = paths[0]
            entry.reserved_bw = 0.0
            entry.fallback = True
            reason = "no_feasible_path"
            kind = "fallback"
        entry.current_path = path
        entry.generation += 1
        out_at = now + self.policy.control_latency
        entry.last_check_ts = out_at
        entry.last_check_bytes = self.flow_stats(entry.key)
        self.log.record(now, kind, entry.key, entry.label, path, reason)
        rules = self._rules_for(entry.key, path, self._priority(entry), out_at)
        return self._install(entry, rules) + [
            Timer(out_at + self.policy.hard_timeout - self.policy.epoch_check_offset,
                  "epoch", entry.key)]

    # -- unaware baseline ---------------------------------------------------

    def _unaware_assign(self, entry: ActiveFlowEntry, paths: list[Path], now: float) -> list:
        path = paths[self.rng.randrange(len(paths))]
        entry.current_path = path
        entry.generation += 1
        self.log.record(now, "random-assign", entry.key, None, path, f"k={len(paths)}")
        out_at = now + self.policy.control_latency
        return self._install(entry, self._rules_for(entry.key, path, self._priority(entry), out_at))

    def _unaware_packet(self, entry: ActiveFlowEntry, pkt, switch, now) -> list:
        actions = []
        out_at = now + self.policy.control_latency
        if switch == entry.current_path.switches[0] and not self._has_live_rules(entry, now):
            # the random pick is kept for the flow's lifetime
            actions += self._install(entry, self._rules_for(
                entry.key, entry.current_path, self._priority(entry), out_at))
            self.log.record(now, "reinstall", entry.key, None, entry.current_path)
        actions.append(PacketOut(pkt, switch, self._next_hop(entry, switch), out_at))
        return actions

    # -- timers ---------------------------------------------------------------

    def on_timer(self, kind: str, key: FlowKey | None, now: float) -> list:
        if kind == "expire":
            self.expire_rules(now)
            return []
        if kind == "epoch":
            entry = self.entries.get(key)
            if entry is None or entry.ended or entry.provisional:
                return []
            if not entry.installed_rules:
                return []
            due = entry.installed_rules[-1].expiry - self.policy.epoch_check_offset
            if now + 1e-9 < due:
                return []  # superseded by a later installation
            span = now - entry.last_check_ts
            delivered = self.flow_stats(key) - entry.last_check_bytes
            measured = delivered * 8 / span if span > 0 else 0.0
            _, actions = self.epoch_check(entry, measured, now)
            return actions
        raise ValueError(f"unknown timer kind {kind!r}")

    def epoch_check(self, entry: ActiveFlowEntry, measured_throughput: float,
                    now: float) -> tuple[str, list]:
        if entry.ended or entry.app_class is None:
            return KEEP, []
        entry.achieved_throughput = measured_throughput
        tcp_like = entry.protocol == "tcp"
        if not tcp_like or measured_throughput >= entry.app_class.min_bw:
            out_at = now + self.policy.control_latency
            entry.last_check_ts = out_at
            entry.last_check_bytes = self.flow_stats(entry.key)
            rules = self._rules_for(entry.key, entry.current_path, self._priority(entry), out_at)
            self.log.record(now, "keep", entry.key, entry.label, entry.current_path,
                            f"throughput={measured_throughput:.0f}")
            return KEEP, self._install(entry, rules) + [
                Timer(out_at + self.policy.hard_timeout - self.policy.epoch_check_offset,
                      "epoch", entry.key)]
        old = entry.current_path
        self.linkstate.release_owner(entry.key)
        entry.reserved_bw = 0.0
        entry.reroutes += 1
        self.log.record(now, "reroute", entry.key, entry.label, old,
                        f"throughput={measured_throughput:.0f}")
        return REROUTE, self._place(entry, now, avoid=old)

    def expire_rules(self, now: float) -> list[ActiveFlowEntry]:
        """Forget expired rules; release reservations of flows left without
        live rules. Ended flows without rules are removed."""
        released = []
        for key in list(self.entries):
            entry = self.entries[key]
            entry.installed_rules = [r for r in entry.installed_rules if not r.expired(now)]
            if entry.installed_rules:
                continue
            if entry.reserved_bw > 0 or entry.ended:
                self.linkstate.release_owner(key)
                entry.reserved_bw = 0.0
                released.append(entry)
                self.log.record(now, "release", key, entry.label, entry.current_path)
            if entry.ended:
                del self.entries[key]
        return released

    def flow_ended(self, key: FlowKey, now: float) -> None:
        entry = self.entries.get(key)
        if entry is not None and not entry.ended:
            entry.ended = True
            self.log.record(now, "flow-end", key, entry.label, entry.current_path)

    # -- invariants -----------------------------------------------------------

    def check_reservations(self) -> None:
        """Reservation conservation: per-edge bookings equal the sum over
        active classified flows and never exceed capacity."""
        ls = self.linkstate
        for e in ls.edges:
            booked = ls.reserved(e)
            if booked > ls.capacity[e] + 1e-6:
                raise AssertionError(f"{e}: reserved {booked} > capacity {ls.capacity[e]}")
            expected = sum(en.reserved_bw for en in self.entries.values()
                           if en.current_path is not None and e in en.current_path.edges
                           and en.reserved_bw > 0)
            if not math.isclose(booked, expected, rel_tol=1e-9, abs_tol=1e-6):
                raise AssertionError(f"{e}: booked {booked} != flow reservations {expected}")
