"""Synthetic per-application packet processes and labeled trace generation.

Each profile draws forward packet sizes from a clipped normal and forward
inter-arrival times from a lognormal with the given mean/std; backward
packets are interleaved with probability ``bwd_ratio`` per forward packet.
The same process drives the signature phase of simulated flows, so the
classifier is trained on exactly the distribution it later sees.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence

from .flows import (BACKWARD, CLASS_TABLE, FORWARD, FlowKey, LabeledExample,
                    PacketRecord, extract_features, fold_packets)

MIN_SIZE = 40
MAX_SIZE = 1500


@dataclass(frozen=True)
class SyntheticAppProfile:
    name: str
    label: int
    size_mean: float      # bytes, forward
    size_std: float
    iat_mean: float       # seconds, forward
    iat_std: float
    bwd_size_mean: float
    bwd_size_std: float
    bwd_ratio: float      # expected backward packets per forward packet

    def __post_init__(self):
        if self.label not in CLASS_TABLE:
            raise ValueError(f"{self.name}: unknown class {self.label}")
        if self.iat_mean <= 0 or self.iat_std < 0 or self.size_mean <= 0:
            raise ValueError(f"{self.name}: bad distribution parameters")
        if not 0 <= self.bwd_ratio <= 1:
            raise ValueError(f"{self.name}: bwd_ratio must be in [0, 1]")


PROFILES: tuple[SyntheticAppProfile, ...] = (
    SyntheticAppProfile("skype", 1, 180, 40, 0.020, 0.004, 170, 40, 0.9),
    SyntheticAppProfile("youtube", 2, 1350, 120, 0.004, 0.0015, 60, 10, 0.5),
    SyntheticAppProfile("google-docs", 2, 1100, 150, 0.006, 0.002, 90, 20, 0.5),
    SyntheticAppProfile("gmail", 3, 700, 150, 0.040, 0.015, 300, 60, 0.7),
    SyntheticAppProfile("facebook", 3, 820, 160, 0.030, 0.012, 350, 80, 0.7),
    SyntheticAppProfile("dropbox", 4, 1460, 30, 0.0012, 0.0004, 52, 4, 0.3),
    SyntheticAppProfile("copy", 4, 1440, 40, 0.0015, 0.0005, 52, 4, 0.3),
    SyntheticAppProfile("filezilla", 4, 1480, 15, 0.0010, 0.0003, 52, 4, 0.25),
    SyntheticAppProfile("torrent", 4, 1400, 80, 0.0020, 0.0008, 80, 20, 0.35),
)
PROFILE_BY_NAME = {p.name: p for p in PROFILES}


def profiles_for(label: int) -> list[SyntheticAppProfile]:
    return [p for p in PROFILES if p.label == label]


def _size(rng: random.Random, mean: float, std: float) -> int:
    return int(round(min(MAX_SIZE, max(MIN_SIZE, rng.gauss(mean, std)))))


def _iat(rng: random.Random, mean: float, std: float) -> float:
    if std == 0:
        return mean
    s2 = math.log1p((std / mean) ** 2)
    return rng.lognormvariate(math.log(mean) - s2 / 2, math.sqrt(s2))


def packet_schedule(profile: SyntheticAppProfile, rng: random.Random,
                    n_forward: int) -> list[tuple[float, int, str]]:
    """``(offset, size, direction)`` triples, offsets from the first packet.

    Backward packets land strictly between forward ones, so the last
    packet is always forward.
    """
    out = []
    t = 0.0
    for i in range(n_forward):
        if i:
            gap = _iat(rng, profile.iat_mean, profile.iat_std)
            if rng.random() < profile.bwd_ratio:
                out.append((t + gap * rng.uniform(0.2, 0.8), _size(
                    rng, profile.bwd_size_mean, profile.bwd_size_std), BACKWARD))
            t += gap
        out.append((t, _size(rng, profile.size_mean, profile.size_std), FORWARD))
    return out


def sample_example(profile: SyntheticAppProfile, rng: random.Random,
                   n_forward: int = 50) -> LabeledExample:
    key = FlowKey("A", "B", profile.name)
    pkts = [PacketRecord(t, "A", "B", size, profile.name, FORWARD) if d == FORWARD
            else PacketRecord(t, "B", "A", size, profile.name, BACKWARD)
            for t, size, d in packet_schedule(profile, rng, n_forward)]
    return LabeledExample(extract_features(fold_packets(key, pkts)), profile.label)


def generate_traces(profiles: Sequence[SyntheticAppProfile] = PROFILES, n_flows: int = 500,
                    seed: int = 0, n_forward: int = 50) -> list[LabeledExample]:
    """Class-balanced labeled examples; within a class, apps alternate."""
    if n_flows < 1:
        raise ValueError("n_flows must be >= 1")
    by_class = {}
    for p in profiles:
        by_class.setdefault(p.label, []).append(p)
    labels = sorted(by_class)
    rng = random.Random(f"traces:{seed}")
    out = []
    for i in range(n_flows):
        label = labels[i % len(labels)]
        apps = by_class[label]
        prof = apps[(i // len(labels)) % len(apps)]
        out.append(sample_example(prof, rng, n_forward))
    return out
