"""Flow identity, per-packet running statistics and classifier features."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import FlowKeyMismatch, InsufficientData, OrderingError, TraceParseError

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True)
class PacketRecord:
    timestamp: float
    src_host: str
    dst_host: str
    size: int
    flow_id: str
    direction: str = FORWARD

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError(f"packet size must be positive, got {self.size}")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")
        if self.direction not in (FORWARD, BACKWARD):
            raise ValueError(f"bad direction {self.direction!r}")


class FlowKey(NamedTuple):
    src_host: str
    dst_host: str
    flow_id: str

    def __str__(self):
        return f"{self.src_host}>{self.dst_host}#{self.flow_id}"


def key_of(pkt: PacketRecord) -> FlowKey:
    """Key of the flow a packet belongs to, oriented by the flow initiator."""
    if pkt.direction == FORWARD:
        return FlowKey(pkt.src_host, pkt.dst_host, pkt.flow_id)
    return FlowKey(pkt.dst_host, pkt.src_host, pkt.flow_id)


@dataclass(frozen=True)
class RunningStats:
    """Single-pass (Welford) count/mean/M2/min/max."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    min: float = math.inf
    max: float = -math.inf

    def push(self, x: float) -> RunningStats:
        n = self.count + 1
        delta = x - self.mean
        mean = self.mean + delta / n
        m2 = self.m2 + delta * (x - mean)
        return RunningStats(n, mean, m2, min(self.min, x), max(self.max, x))

    @property
    def std(self) -> float:
        # population standard deviation
        if self.count == 0:
            return 0.0
        return math.sqrt(max(self.m2, 0.0) / self.count)


@dataclass(frozen=True)
class FlowRecord:
    key: FlowKey
    first_ts: float | None = None
    last_ts: float | None = None
    fwd_packet_count: int = 0
    bwd_packet_count: int = 0
    fwd_byte_count: int = 0
    bwd_byte_count: int = 0
    fwd_interarrival_stats: RunningStats = field(default_factory=RunningStats)
    fwd_length_stats: RunningStats = field(default_factory=RunningStats)
    bwd_length_stats: RunningStats = field(default_factory=RunningStats)
    last_fwd_ts: float | None = None


def update_flow(record: FlowRecord, pkt: PacketRecord) -> FlowRecord:
    if key_of(pkt) != record.key:
        raise FlowKeyMismatch(f"packet of {key_of(pkt)} applied to {record.key}")
    if record.last_ts is not None and pkt.timestamp < record.last_ts:
        raise OrderingError(
            f"packet at t={pkt.timestamp} precedes last_ts={record.last_ts}")
    first_ts = pkt.timestamp if record.first_ts is None else record.first_ts
    if pkt.direction == FORWARD:
        iat = record.fwd_interarrival_stats
        if record.last_fwd_ts is not None:
            iat = iat.push(pkt.timestamp - record.last_fwd_ts)
        return replace(
            record,
            first_ts=first_ts,
            last_ts=pkt.timestamp,
            fwd_packet_count=record.fwd_packet_count + 1,
            fwd_byte_count=record.fwd_byte_count + pkt.size,
            fwd_interarrival_stats=iat,
            fwd_length_stats=record.fwd_length_stats.push(pkt.size),
            last_fwd_ts=pkt.timestamp,
        )
    return replace(
        record,
        first_ts=first_ts,
        last_ts=pkt.timestamp,
        bwd_packet_count=record.bwd_packet_count + 1,
        bwd_byte_count=record.bwd_byte_count + pkt.size,
        bwd_length_stats=record.bwd_length_stats.push(pkt.size),
    )


def fold_packets(key: FlowKey, packets: Iterable[PacketRecord]) -> FlowRecord:
    record = FlowRecord(key)
    for pkt in packets:
        record = update_flow(record, pkt)
    return record


@dataclass(frozen=True)
class FeatureVector:
    """The seven per-flow features. Ports and protocol are deliberately absent."""

    duration: float
    mean_fwd_iat: float
    std_fwd_iat: float
    min_fwd_iat: float
    max_fwd_iat: float
    mean_fwd_pkt_len: float
    mean_bwd_pkt_len: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"feature {f.name}={v} must be finite and >= 0")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))

    def __getitem__(self, index: int) -> float:
        """1-based feature access, matching the tree's feature numbering."""
        if not 1 <= index <= N_FEATURES:
            raise IndexError(index)
        return self.as_tuple()[index - 1]


FEATURE_NAMES = tuple(f.name for f in fields(FeatureVector))
N_FEATURES = len(FEATURE_NAMES)


def extract_features(record: FlowRecord) -> FeatureVector:
    if record.fwd_packet_count < 2:
        raise InsufficientData(
            f"need >= 2 forward packets, have {record.fwd_packet_count}")
    iat = record.fwd_interarrival_stats
    bwd_len = record.bwd_length_stats.mean if record.bwd_packet_count else 0.0
    return FeatureVector(
        duration=record.last_ts - record.first_ts,
        mean_fwd_iat=iat.mean,
        std_fwd_iat=iat.std,
        min_fwd_iat=iat.min,
        max_fwd_iat=iat.max,
        mean_fwd_pkt_len=record.fwd_length_stats.mean,
        mean_bwd_pkt_len=bwd_len,
    )


@dataclass(frozen=True)
class AppClass:
    label: int
    min_bw: float           # bits/s
    acceptable_delay: float  # seconds; inf means best effort

    @property
    def best_effort(self) -> bool:
        return math.isinf(self.acceptable_delay)


# Scaled-down requirements table used for every experiment.
CLASS_TABLE: dict[int, AppClass] = {
    1: AppClass(1, 10e6, 0.020),
    2: AppClass(2, 5e6, 0.040),
    3: AppClass(3, 2e6, 0.060),
    4: AppClass(4, 1e6, math.inf),
}
N_CLASSES = 4


class LabeledExample(NamedTuple):
    features: FeatureVector
    label: int


TRACE_HEADER = "label," + ",".join(f"f{i}" for i in range(1, N_FEATURES + 1))


def write_traces(path, examples: Iterable[LabeledExample]) -> None:
    lines = [TRACE_HEADER]
    for ex in examples:
        lines.append(",".join([str(ex.label)] + [repr(v) for v in ex.features.as_tuple()]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_traces(path) -> list[LabeledExample]:
    out = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != TRACE_HEADER:
            raise TraceParseError(path, 1, f"expected header {TRACE_HEADER!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != N_FEATURES + 1:
                raise TraceParseError(path, lineno, f"expected {N_FEATURES + 1} fields")
            try:
                label = int(parts[0])
                fv = FeatureVector(*(float(p) for p in parts[1:]))
            except ValueError as exc:
                raise TraceParseError(path, lineno, str(exc)) from None
            if label not in CLASS_TABLE:
                raise TraceParseError(path, lineno, f"label {label} not in 1..{N_CLASSES}")
            out.append(LabeledExample(fv, label))
    return out
