"""Deterministic discrete-event network simulation.

Output ports are tail-drop FIFO queues kept in closed form: a port only
stores the time its transmitter frees up, so the backlog at ``t`` is
``(busy_until - t) * capacity`` and a packet's departure time follows from
the Lindley recursion. Each packet therefore costs one event per hop.
Background (unmanaged) traffic is a per-port Poisson stream that is folded
into the queue lazily, whenever the port is touched.

Events are ordered by ``(time, sequence)``; the sequence number is the
insertion counter, which makes every run bitwise reproducible.
"""
from __future__ import annotations

import csv
import hashlib
import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .controller import (Controller, Drop, InstallRule, PacketOut, Timer,
                         FlowTable)
from .errors import ConfigError
from .flows import BACKWARD, FORWARD, FlowKey, PacketRecord
from .linkstate import Edge, Topology
from .traces import PROFILE_BY_NAME, packet_schedule

CBR = "cbr"
AIMD = "aimd"

# event kinds
ARRIVE, SEND, ACK, LOSS, PKT_OUT, INSTALL, TIMER, PROBE, START, END, BWD, TICK = range(12)

MAX_HOPS = 32
_PACED = -1  # SEND marker for a paced AIMD transmission


@dataclass(frozen=True)
class TrafficSpec:
    flow_id: str
    kind: str
    label: int
    src: str
    dst: str
    rate: float = 1e6           # bits/s, cbr only
    packet_size: int = 1250
    start: float = 0.0
    duration: float = 1000.0
    seed: int = 0
    app: str | None = None      # profile driving the first packets
    max_window: float = math.inf  # aimd only, packets

    def __post_init__(self):
        if self.kind not in (CBR, AIMD):
            raise ConfigError(f"{self.flow_id}: kind must be {CBR!r} or {AIMD!r}")
        if self.duration <= 0:
            raise ConfigError(f"{self.flow_id}: duration must be > 0")
        if self.packet_size <= 0:
            raise ConfigError(f"{self.flow_id}: packet_size must be > 0")
        if self.kind == CBR and self.rate <= 0:
            raise ConfigError(f"{self.flow_id}: rate must be > 0")
        if self.app is not None and self.app not in PROFILE_BY_NAME:
            raise ConfigError(f"{self.flow_id}: unknown app profile {self.app!r}")

    @property
    def protocol(self) -> str:
        return "tcp" if self.kind == AIMD else "udp"

    @property
    def key(self) -> FlowKey:
        return FlowKey(self.src, self.dst, self.flow_id)


@dataclass(frozen=True)
class BackgroundSpec:
    """Unmanaged Poisson load offered to one directed inter-switch edge."""

    u: str
    v: str
    rate: float
    packet_size: int = 1500
    start: float = 0.0
    duration: float = math.inf
    lid: str | None = None


@dataclass(frozen=True)
class SimConfig:
    duration: float = 1000.0
    interval: float = 100.0
    queue_limit: int = 256 * 1024   # bytes
    probe_period: float = 100.0
    probe_start: float = 2.0
    initial_srtt: float = 0.1
    check_invariants: bool = False

    def __post_init__(self):
        if self.duration <= 0 or self.interval <= 0 or self.probe_period <= 0:
            raise ConfigError("duration, interval and probe_period must be > 0")
        if self.queue_limit <= 0:
            raise ConfigError("queue_limit must be > 0")


# -- ports --------------------------------------------------------------------

class _BgStream:
    """Poisson arrivals; gaps are drawn in batches from a seeded generator."""

    __slots__ = ("rng", "mean_gap", "size", "next", "end", "gaps", "gi")

    BATCH = 4096

    def __init__(self, rng: np.random.Generator, rate, size, start, end):
        self.rng = rng
        self.mean_gap = size * 8.0 / rate
        self.size = size
        self.end = end
        self.gaps: list = []
        self.gi = 0
        self.next = start + self.gap()
        if self.next >= end:
            self.next = math.inf

    def gap(self) -> float:
        if self.gi >= len(self.gaps):
            self.gaps = self.rng.exponential(self.mean_gap, self.BATCH).tolist()
            self.gi = 0
        g = self.gaps[self.gi]
        self.gi += 1
        return g


class Port:
    """Transmit side of one directed link."""

    __slots__ = ("name", "capacity", "byte_rate", "latency", "limit", "busy",
                 "streams", "bg_next", "bg_bytes", "bg_drops", "bg_sent", "rev",
                 "mark_bytes", "mark_t")

    def __init__(self, name, capacity: float, latency: float, limit: float):
        self.name = name
        self.capacity = capacity
        self.byte_rate = capacity / 8.0
        self.latency = latency
        self.limit = limit
        self.busy = 0.0
        self.streams: list[_BgStream] = []
        self.bg_next = math.inf
        self.bg_bytes = 0     # accepted background bytes
        self.bg_sent = 0
        self.bg_drops = 0
        self.rev = None
        self.mark_bytes = 0
        self.mark_t = 0.0

    def add_background(self, stream: _BgStream) -> None:
        self.streams.append(stream)
        self.bg_next = min(s.next for s in self.streams)

    def catch_up(self, t: float) -> None:
        """Fold background arrivals strictly before ``t`` into the queue."""
        streams = self.streams
        if len(streams) != 1:
            self._catch_up_merged(t)
            return
        s = streams[0]
        br = self.byte_rate
        limit = self.limit
        size = s.size
        tx = size / br
        at = s.next
        busy = self.busy
        sent = drops = 0
        gaps, gi, end = s.gaps, s.gi, s.end
        while at < t:
            sent += 1
            if busy > at:
                if (busy - at) * br + size > limit:
                    drops += 1
                else:
                    busy += tx
            else:
                busy = at + tx
            if gi >= len(gaps):
                s.gi = gi
                s.gap()
                gaps, gi = s.gaps, 0
            at += gaps[gi]
            gi += 1
            if at >= end:
                at = math.inf
        s.gaps, s.gi = gaps, gi
        s.next = at
        self.busy = busy
        self.bg_next = at
        self.bg_sent += sent
        self.bg_drops += drops
        self.bg_bytes += (sent - drops) * size

    def _catch_up_merged(self, t: float) -> None:
        streams = self.streams
        br = self.byte_rate
        while self.bg_next < t:
            s = min(streams, key=_next_of)
            at, size = s.next, s.size
            self.bg_sent += 1
            busy = self.busy
            if busy > at:
                if (busy - at) * br + size > self.limit:
                    self.bg_drops += 1
                else:
                    self.busy = busy + size / br
                    self.bg_bytes += size
            else:
                self.busy = at + size / br
                self.bg_bytes += size
            nxt = at + s.gap()
            s.next = nxt if nxt < s.end else math.inf
            self.bg_next = min(x.next for x in streams)

    def admit(self, size: int, t: float) -> float:
        """Departure time of the last bit, or -1.0 on tail drop."""
        if self.bg_next < t:
            self.catch_up(t)
        busy = self.busy
        if busy > t:
            if (busy - t) * self.byte_rate + size > self.limit:
                return -1.0
            busy += size / self.byte_rate
        else:
            busy = t + size / self.byte_rate
        self.busy = busy
        return busy

    def backlog_bytes(self, t: float) -> float:
        self.catch_up(t)
        return max(0.0, self.busy - t) * self.byte_rate

    def queue_delay(self, t: float) -> float:
        if self.bg_next < t:
            self.catch_up(t)
        return self.busy - t if self.busy > t else 0.0


def _next_of(s):
    return s.next


def _seed_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def emit_probe(port: Port, t: float) -> float:
    """Probe traversal time of a link: propagation plus the current backlog."""
    return port.latency + port.queue_delay(t)


# -- sources ----------------------------------------------------------------

@dataclass
class AimdState:
    cwnd: float = 4.0
    srtt: float | None = None
    last_cut: float = -math.inf
    max_window: float = math.inf
    in_flight: int = 0


def aimd_step(state: AimdState, event: str, now: float, rtt: float | None = None) -> AimdState:
    """Apply one ACK or loss to the window. Updates ``state`` and returns it.

    ACK: ``cwnd += 1/cwnd`` (one packet per window of ACKs). Loss: halve,
    at most once per smoothed RTT so a burst of drops counts as one event.
    """
    state.in_flight -= 1
    if event == "ack":
        if rtt is not None:
            state.srtt = rtt if state.srtt is None else 0.875 * state.srtt + 0.125 * rtt
        state.cwnd = min(state.max_window, state.cwnd + 1.0 / state.cwnd)
    elif event == "loss":
        if state.srtt is None or now - state.last_cut >= state.srtt:
            state.cwnd = max(1.0, state.cwnd / 2.0)
            state.last_cut = now
    else:
        raise ValueError(f"unknown AIMD event {event!r}")
    return state


def jitter_of(interarrivals: Sequence[float]) -> float:
    """Mean absolute difference of consecutive inter-arrival times; NaN with
    fewer than two inter-arrivals (three packets)."""
    if len(interarrivals) < 2:
        return math.nan
    return sum(abs(b - a) for a, b in zip(interarrivals, interarrivals[1:])) / (len(interarrivals) - 1)


class _Packet:
    __slots__ = ("flow", "size", "sent", "prio", "transition", "hops", "pid")

    def __init__(self, flow, size, sent, pid):
        self.flow = flow
        self.size = size
        self.sent = sent
        self.prio = None
        self.transition = False
        self.hops = []
        self.pid = pid


class _Flow:
    def __init__(self, spec: TrafficSpec, n_intervals: int, seed: int):
        self.spec = spec
        self.key = spec.key
        self.rng = random.Random(f"{seed}:flow:{spec.flow_id}:{spec.seed}")
        self.sent = 0
        self.delivered = 0
        self.delivered_bytes = 0
        self.dropped = 0
        self.late = 0            # delivered after the end of the run
        self.reroute_lost = 0
        self.active = False
        self.ended = False
        self.end_t = spec.start + spec.duration
        self.sig: list = []
        self.aimd: AimdState | None = None
        self.bytes = [0] * n_intervals
        self.ndel = [0] * n_intervals
        self.ndrop = [0] * n_intervals
        self.delay = [0.0] * n_intervals
        self.jsum = [0.0] * n_intervals
        self.jn = [0] * n_intervals
        self.j_int = -1
        self.j_last = 0.0
        self.j_iat = -1.0
        self.live: set | None = None
        self.pace_next = 0.0
        self.pace_pending = False


# -- metrics --------------------------------------------------------------------

METRIC_COLUMNS = ("interval_start", "flow_id", "class", "throughput_bps",
                  "jitter_s", "loss_frac", "delay_s")


@dataclass(frozen=True)
class MetricRow:
    interval_start: float
    flow_id: str
    label: int
    throughput_bps: float
    jitter_s: float
    loss_frac: float
    delay_s: float


@dataclass
class MetricSeries:
    flow_id: str
    label: int
    kind: str
    start: float
    interval: float
    rows: list = field(default_factory=list)

    def throughputs(self) -> list[float]:
        return [r.throughput_bps for r in self.rows]

    def full_intervals(self, warmup: float = 0.0) -> list[MetricRow]:
        """Rows whose interval lies entirely after ``start + warmup``."""
        return [r for r in self.rows if r.interval_start >= self.start + warmup - 1e-9]

    def long_run_throughput(self, warmup: float = 0.0) -> float:
        rows = self.full_intervals(warmup)
        return sum(r.throughput_bps for r in rows) / len(rows) if rows else math.nan

    def mean_jitter(self) -> float:
        vals = [r.jitter_s for r in self.rows if not math.isnan(r.jitter_s)]
        return sum(vals) / len(vals) if vals else math.nan


def write_metrics_csv(path, series: Sequence[MetricSeries]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for s in series:
            for r in s.rows:
                w.writerow([repr(r.interval_start), r.flow_id, r.label, repr(r.throughput_bps),
                            repr(r.jitter_s), repr(r.loss_frac), repr(r.delay_s)])


@dataclass
class SimResult:
    series: list[MetricSeries]
    log: list[str]
    counters: dict
    flows: dict  # flow_id -> per-flow totals

    def by_id(self, flow_id: str) -> MetricSeries:
        for s in self.series:
            if s.flow_id == flow_id:
                return s
        raise KeyError(flow_id)


class InvariantViolation(AssertionError):
    pass


# -- engine -----------------------------------------------------------------------

class Simulator:
    def __init__(self, topology: Topology, controller: Controller,
                 traffic: Sequence[TrafficSpec], background: Sequence[BackgroundSpec] = (),
                 config: SimConfig | None = None, seed: int = 0):
        self.topology = topology
        self.controller = controller
        self.config = config or SimConfig()
        self.seed = seed
        self._validate(traffic, background)
        cfg = self.config
        self.n_intervals = max(1, math.ceil(cfg.duration / cfg.interval - 1e-9))
        self.ports: dict = {}
        for e in topology.edges():
            link = topology.link_of(e)
            self.ports[e] = Port(e, link.capacity, link.base_latency, cfg.queue_limit)
        for e, p in self.ports.items():
            p.rev = self.ports[e.reverse()]
        # host attachment ports: (host -> switch) and (switch -> host)
        self.uplink: dict[str, Port] = {}
        self.downlink: dict[str, Port] = {}
        for h, sw in topology.hosts.items():
            link = topology.host_link(h)
            self.uplink[h] = Port((h, sw), link.capacity, link.base_latency, cfg.queue_limit)
            self.downlink[h] = Port((sw, h), link.capacity, link.base_latency, cfg.queue_limit)
            self.uplink[h].rev = self.downlink[h]
            self.downlink[h].rev = self.uplink[h]
        for i, b in enumerate(background):
            edge = self._edge_for(b)
            rng = np.random.default_rng(_seed_int(f"{seed}:bg:{i}:{b.u}:{b.v}"))
            self.ports[edge].add_background(
                _BgStream(rng, b.rate, b.packet_size, b.start, b.start + b.duration))
        self.tables = {sw: FlowTable() for sw in topology.switches}
        self.flows = [_Flow(s, self.n_intervals, seed) for s in traffic]
        self.by_key = {f.key: f for f in self.flows}
        for f in self.flows:
            f.uplink = self.uplink[f.spec.src]
            f.src_sw = topology.hosts[f.spec.src]
        controller.flow_stats = self._flow_bytes
        self.heap: list = []
        self.seq = 0
        self.now = 0.0
        self.events = 0
        self.pid = 0
        self.control_actions = 0
        self.check = cfg.check_invariants
        if self.check:
            for f in self.flows:
                f.live = set()

    # -- setup ----------------------------------------------------------------

    def _validate(self, traffic, background) -> None:
        topo = self.topology
        try:
            topo.validate()
        except Exception as exc:
            raise ConfigError(f"bad topology: {exc}") from None
        ids = set()
        for s in traffic:
            if s.flow_id in ids:
                raise ConfigError(f"duplicate flow id {s.flow_id}")
            ids.add(s.flow_id)
            for h in (s.src, s.dst):
                if h not in topo.hosts:
                    raise ConfigError(f"{s.flow_id}: unknown host {h}")
            if s.src == s.dst:
                raise ConfigError(f"{s.flow_id}: source equals destination")
            if s.kind == CBR and s.rate > topo.host_link(s.src).capacity:
                raise ConfigError(f"{s.flow_id}: rate exceeds attachment link capacity")
        for b in background:
            if b.rate <= 0 or b.packet_size <= 0:
                raise ConfigError(f"background {b.u}-{b.v}: rate and size must be > 0")
            self._edge_for(b)

    def _edge_for(self, b: BackgroundSpec) -> Edge:
        for e in self.topology.edges():
            if e.u == b.u and e.v == b.v and (b.lid is None or e.lid == b.lid):
                return e
        raise ConfigError(f"background on unknown edge {b.u}-{b.v}")

    def _flow_bytes(self, key: FlowKey) -> int:
        f = self.by_key.get(key)
        return f.delivered_bytes if f is not None else 0

    def push(self, t: float, kind: int, a=None, b=None) -> None:
        if self.check and t < self.now - 1e-12:
            raise InvariantViolation(f"causality: event at {t} scheduled from {self.now}")
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, kind, a, b))

    # -- main loop ------------------------------------------------------------

    def run(self) -> SimResult:
        cfg = self.config
        for f in self.flows:
            if f.spec.start < cfg.duration:
                self.push(f.spec.start, START, f)
        t = cfg.probe_start
        while t < cfg.duration:
            self.push(t, PROBE)
            t += cfg.probe_period
        if self.check:
            for i in range(1, self.n_intervals + 1):
                self.push(min(i * cfg.interval, cfg.duration), TICK)
        heap = self.heap
        pop = heapq.heappop
        end = cfg.duration
        arrive = self._arrive
        handlers = {
            SEND: self._on_send, ACK: self._on_ack, LOSS: self._on_loss,
            PKT_OUT: self._on_packet_out, INSTALL: self._on_install,
            TIMER: self._on_timer, PROBE: self._on_probe, START: self._on_start,
            END: self._on_end, BWD: self._on_backward, TICK: self._on_tick,
        }
        check = self.check
        n = 0
        while heap:
            t, _, kind, a, b = pop(heap)
            if t > end:
                break
            self.now = t
            n += 1
            if kind == ARRIVE:
                arrive(t, a, b)
            else:
                handlers[kind](t, a, b)
            if check:
                self._check_packets()
        self.events = n
        self.now = end
        if check:
            self._check_packets()
            self.controller.check_reservations()
        return self._result()

    # -- data plane -----------------------------------------------------------------

    def _send_packet(self, t: float, flow: _Flow, size: int) -> None:
        self.pid += 1
        pkt = _Packet(flow, size, t, self.pid)
        flow.sent += 1
        if flow.live is not None:
            flow.live.add(pkt.pid)
        up = flow.uplink
        dep = up.admit(size, t)
        if dep < 0:
            self._drop(t, pkt, "queue")
            return
        self.seq += 1
        heapq.heappush(self.heap, (dep + up.latency, self.seq, ARRIVE, flow.src_sw, pkt))

    def _arrive(self, t: float, sw: str, pkt: _Packet) -> None:
        flow = pkt.flow
        rule = self.tables[sw].lookup(flow.key, t)
        if rule is None:
            self._packet_in(t, sw, pkt)
            return
        if pkt.prio is None:
            pkt.prio = rule.priority
        elif rule.priority != pkt.prio:
            pkt.transition = True
        self._forward(t, sw, pkt, rule.next_hop)

    def _forward(self, t: float, sw: str, pkt: _Packet, hop) -> None:
        flow = pkt.flow
        if hop.__class__ is str:
            if hop != flow.spec.dst:
                self._drop(t, pkt, "misroute")
                return
            down = self.downlink[hop]
            dep = down.admit(pkt.size, t)
            if dep < 0:
                self._drop(t, pkt, "queue")
                return
            self._deliver(t, pkt, dep + down.latency)
            return
        if len(pkt.hops) >= MAX_HOPS:
            self._drop(t, pkt, "ttl")
            return
        port = self.ports[hop]
        dep = port.admit(pkt.size, t)
        if dep < 0:
            self._drop(t, pkt, "queue")
            return
        pkt.hops.append(port)
        self.seq += 1
        heapq.heappush(self.heap, (dep + port.latency, self.seq, ARRIVE, hop.v, pkt))

    def _deliver(self, t: float, pkt: _Packet, d: float) -> None:
        flow = pkt.flow
        if flow.live is not None:
            flow.live.remove(pkt.pid)
        if d > self.config.duration:
            flow.late += 1
            return
        flow.delivered += 1
        flow.delivered_bytes += pkt.size
        i = min(int(d / self.config.interval), self.n_intervals - 1)
        flow.bytes[i] += pkt.size
        flow.ndel[i] += 1
        flow.delay[i] += d - pkt.sent
        if flow.j_int == i:
            iat = d - flow.j_last
            if flow.j_iat >= 0:
                flow.jsum[i] += abs(iat - flow.j_iat)
                flow.jn[i] += 1
            flow.j_iat = iat
        else:
            flow.j_int = i
            flow.j_iat = -1.0
        flow.j_last = d
        st = flow.aimd
        if st is not None:
            # acknowledgements travel out of band but see the reverse backlog
            back = self.uplink[flow.spec.dst].latency + self.downlink[flow.spec.src].latency
            for p in pkt.hops:
                r = p.rev
                back += r.latency + r.queue_delay(t)
            self.push(d + back, ACK, flow, pkt.sent)

    def _drop(self, t: float, pkt: _Packet, reason: str) -> None:
        flow = pkt.flow
        if flow.live is not None:
            flow.live.remove(pkt.pid)
        flow.dropped += 1
        i = min(int(t / self.config.interval), self.n_intervals - 1)
        flow.ndrop[i] += 1
        if pkt.transition:
            flow.reroute_lost += 1
        st = flow.aimd
        if st is not None:
            srtt = st.srtt if st.srtt is not None else self.config.initial_srtt
            self.push(max(t, pkt.sent + 2.0 * srtt), LOSS, flow)

    # -- control plane ------------------------------------------------------------

    def _packet_in(self, t: float, sw: str, pkt: _Packet) -> None:
        flow = pkt.flow
        spec = flow.spec
        rec = PacketRecord(t, spec.src, spec.dst, pkt.size, spec.flow_id, FORWARD)
        actions = self.controller.handle_packet_in(rec, sw, t, spec.protocol)
        handled = False
        for act in actions:
            if isinstance(act, PacketOut) and act.packet is rec:
                self.push(act.at, PKT_OUT, pkt, (act.switch, act.next_hop))
                handled = True
            elif isinstance(act, Drop) and act.packet is rec:
                self._drop(t, pkt, act.reason)
                handled = True
            else:
                self._apply(act)
        if not handled:
            self._drop(t, pkt, "no-action")
        if self.check:
            self.controller.check_reservations()

    def _apply(self, act) -> None:
        self.control_actions += 1
        if isinstance(act, InstallRule):
            self.push(act.rule.install_ts, INSTALL, act.rule)
        elif isinstance(act, Timer):
            self.push(act.at, TIMER, act.kind, act.key)
        else:
            raise TypeError(f"unexpected action {act!r}")

    def _on_packet_out(self, t, pkt, where) -> None:
        sw, hop = where
        self._forward(t, sw, pkt, hop)

    def _on_install(self, t, rule, _) -> None:
        self.tables[rule.switch].install(rule)

    def _on_timer(self, t, kind, key) -> None:
        for act in self.controller.on_timer(kind, key, t):
            self._apply(act)
        if self.check:
            self.controller.check_reservations()

    def _on_probe(self, t, _a, _b) -> None:
        ls = self.controller.linkstate
        c = self.controller.policy.control_latency
        for e, port in self.ports.items():
            sample = emit_probe(port, t)
            # controller->u, u->v, v->controller; each switch echo is 2c
            ls.ingest_probe(e, c + sample + c, 2 * c, 2 * c)
            span = t - port.mark_t
            if span > 0:
                ls.set_background(e, (port.bg_bytes - port.mark_bytes) * 8.0 / span)
            port.mark_bytes = port.bg_bytes
            port.mark_t = t
        ls.refresh(t)

    def _on_backward(self, t, flow, size) -> None:
        spec = flow.spec
        rec = PacketRecord(t, spec.dst, spec.src, size, spec.flow_id, BACKWARD)
        self.controller.handle_packet_in(rec, self.topology.hosts[spec.dst], t, spec.protocol)

    def _on_tick(self, t, _a, _b) -> None:
        self.controller.check_reservations()

    # -- sources ----------------------------------------------------------------

    def _on_start(self, t, flow: _Flow, _b) -> None:
        spec = flow.spec
        flow.active = True
        self.controller.log.record(t, "flow-start", flow.key, reason=f"kind={spec.kind}")
        self.push(flow.end_t, END, flow)
        if spec.app is None:
            self._start_bulk(t, flow)
            return
        sched = packet_schedule(PROFILE_BY_NAME[spec.app], flow.rng,
                                self.controller.policy.n_observe)
        fwd = [(t + off, size) for off, size, d in sched if d == FORWARD]
        for off, size, d in sched:
            if d == BACKWARD:
                self.push(t + off, BWD, flow, size)
        flow.sig = fwd
        self.push(fwd[0][0], SEND, flow, 0)

    def _on_send(self, t, flow: _Flow, idx) -> None:
        if flow.ended:
            return
        if idx == _PACED:
            flow.pace_pending = False
            self._fill_window(t, flow)
            return
        if idx is None:  # bulk CBR
            spec = flow.spec
            self._send_packet(t, flow, spec.packet_size)
            nxt = t + spec.packet_size * 8.0 / spec.rate
            if nxt < flow.end_t:
                self.push(nxt, SEND, flow, None)
            return
        self._send_packet(t, flow, flow.sig[idx][1])
        if idx + 1 < len(flow.sig):
            self.push(flow.sig[idx + 1][0], SEND, flow, idx + 1)
        else:
            # bulk phase starts one mean gap after the last signature packet
            gap = PROFILE_BY_NAME[flow.spec.app].iat_mean
            self._start_bulk_at(t + gap, flow)

    def _start_bulk_at(self, t, flow) -> None:
        if flow.spec.kind == CBR:
            if t < flow.end_t:
                self.push(t, SEND, flow, None)
        else:
            self.push(t, ACK, flow, None)  # a None ack opens the window

    def _start_bulk(self, t, flow) -> None:
        self._start_bulk_at(t, flow)

    def _fill_window(self, t, flow) -> None:
        # window-limited and paced at cwnd / srtt
        st = flow.aimd
        size = flow.spec.packet_size
        while st.in_flight < int(st.cwnd) and not flow.ended:
            if flow.pace_next > t:
                if not flow.pace_pending:
                    flow.pace_pending = True
                    self.push(flow.pace_next, SEND, flow, _PACED)
                return
            st.in_flight += 1
            self._send_packet(t, flow, size)
            srtt = st.srtt if st.srtt is not None else self.config.initial_srtt
            flow.pace_next = max(flow.pace_next, t) + srtt / st.cwnd

    def _on_ack(self, t, flow: _Flow, sent) -> None:
        if sent is None:
            if flow.aimd is None:
                flow.aimd = AimdState(cwnd=min(4.0, flow.spec.max_window),
                                      max_window=flow.spec.max_window)
            self._fill_window(t, flow)
            return
        aimd_step(flow.aimd, "ack", t, t - sent)
        self._fill_window(t, flow)

    def _on_loss(self, t, flow: _Flow, _b) -> None:
        aimd_step(flow.aimd, "loss", t)
        self._fill_window(t, flow)

    def _on_end(self, t, flow: _Flow, _b) -> None:
        flow.ended = True
        self.controller.flow_ended(flow.key, t)

    # -- invariants and results ------------------------------------------------

    def _check_packets(self) -> None:
        for f in self.flows:
            if f.sent != f.delivered + f.late + f.dropped + len(f.live):
                raise InvariantViolation(
                    f"{f.spec.flow_id}: sent {f.sent} != delivered {f.delivered + f.late}"
                    f" + dropped {f.dropped} + in flight {len(f.live)}")

    def _result(self) -> SimResult:
        cfg = self.config
        series = []
        totals = {}
        for f in self.flows:
            s = MetricSeries(f.spec.flow_id, f.spec.label, f.spec.kind, f.spec.start, cfg.interval)
            for i in range(self.n_intervals):
                start = i * cfg.interval
                span = min(cfg.interval, cfg.duration - start)
                nd, nx = f.ndel[i], f.ndrop[i]
                s.rows.append(MetricRow(
                    interval_start=start,
                    flow_id=f.spec.flow_id,
                    label=f.spec.label,
                    throughput_bps=f.bytes[i] * 8.0 / span,
                    jitter_s=f.jsum[i] / f.jn[i] if f.jn[i] else math.nan,
                    loss_frac=nx / (nd + nx) if nd + nx else 0.0,
                    delay_s=f.delay[i] / nd if nd else math.nan,
                ))
            series.append(s)
            in_flight = f.sent - f.delivered - f.dropped
            totals[f.spec.flow_id] = {
                "sent": f.sent, "delivered": f.delivered, "dropped": f.dropped,
                "in_flight": in_flight, "reroute_lost": f.reroute_lost,
            }
        counters = {
            "events": self.events,
            "sent": sum(v["sent"] for v in totals.values()),
            "delivered": sum(v["delivered"] for v in totals.values()),
            "dropped": sum(v["dropped"] for v in totals.values()),
            "in_flight": sum(v["in_flight"] for v in totals.values()),
            "reroute_lost": sum(v["reroute_lost"] for v in totals.values()),
            "bg_sent": sum(p.bg_sent for p in self.ports.values()),
            "bg_dropped": sum(p.bg_drops for p in self.ports.values()),
            "classifications": self.controller.classifications,
        }
        return SimResult(series, list(self.controller.log), counters, totals)


def run(topology: Topology, controller: Controller, traffic: Sequence[TrafficSpec],
        sim_duration: float = 1000.0, seed: int = 0,
        background: Sequence[BackgroundSpec] = (), config: SimConfig | None = None) -> SimResult:
    """Simulate ``traffic`` for ``sim_duration`` seconds."""
    if config is None:
        config = SimConfig(duration=sim_duration)
    elif config.duration != sim_duration:
        config = SimConfig(**{**config.__dict__, "duration": sim_duration})
    return Simulator(topology, controller, traffic, background, config, seed).run()
