"""Built-in scenarios, experiment configuration and report writing."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

from . import classifier
from .controller import AWARE, UNAWARE, Controller, PolicyConfig
from .errors import ConfigError
from .linkstate import Topology, load_topology
from .simulator import (AIMD, CBR, BackgroundSpec, SimConfig, SimResult,
                        Simulator, TrafficSpec, write_metrics_csv)
from .traces import generate_traces, profiles_for

MBPS = 1e6
LABELS = (1, 2, 3, 4)

# Inter-switch links of the replica topology: (a, b, latency s, background b/s
# offered in each direction). Four edge-disjoint s1->s5 routes with rising
# latency and load, plus two cross links that create longer mixed routes.
REPLICA_LINKS = (
    ("s1", "s5", 0.006, 2 * MBPS),
    ("s1", "s2", 0.004, 14 * MBPS),
    ("s2", "s5", 0.005, 14 * MBPS),
    ("s1", "s3", 0.006, 18 * MBPS),
    ("s3", "s5", 0.007, 18 * MBPS),
    ("s1", "s4", 0.008, 22 * MBPS),
    ("s4", "s5", 0.030, 22 * MBPS),
    ("s2", "s3", 0.003, 0.0),
    ("s3", "s4", 0.002, 0.0),
)
LINK_CAPACITY = 32 * MBPS
HOST_CAPACITY = 1e9
HOST_LATENCY = 5e-5


def replica_topology() -> Topology:
    topo = Topology()
    for i in range(1, 6):
        topo.add_switch(f"s{i}")
    for a, b, lat, _ in REPLICA_LINKS:
        topo.add_link(a, b, LINK_CAPACITY, lat, lid=f"{a}-{b}")
    topo.add_host("H1", "s1", HOST_CAPACITY, HOST_LATENCY)
    topo.add_host("H2", "s5", HOST_CAPACITY, HOST_LATENCY)
    topo.validate()
    return topo


def replica_background(packet_size: int, scale: float = 1.0) -> list[BackgroundSpec]:
    out = []
    for a, b, _, rate in REPLICA_LINKS:
        if rate > 0:
            out.append(BackgroundSpec(a, b, rate * scale, packet_size))
            out.append(BackgroundSpec(b, a, rate * scale, packet_size))
    return out


@dataclass(frozen=True)
class ScenarioParams:
    duration: float = 1000.0
    start_min: float = 5.0
    start_max: float = 30.0
    udp_rate: float = 1 * MBPS
    udp_packet_size: int = 1250
    tcp_packet_size: int = 9000
    tcp_max_window: float = 8.0
    bg_packet_size: int = 4500
    bg_scale: float = 1.0
    late_start: float = 450.0

    def __post_init__(self):
        if not 0 <= self.start_min <= self.start_max < self.duration:
            raise ConfigError("need 0 <= start_min <= start_max < duration")
        if self.udp_rate <= 0 or self.bg_scale < 0:
            raise ConfigError("udp_rate must be > 0 and bg_scale >= 0")


SCENARIOS = ("udp-jitter", "tcp-throughput", "mixed-throughput", "mixed-jitter",
             "late-flow", "epoch-adversarial")


def _class_flows(kind: str, src: str, dst: str, p: ScenarioParams,
                 rng: random.Random, tag: str) -> list[TrafficSpec]:
    out = []
    for label in LABELS:
        app = rng.choice(profiles_for(label)).name
        start = rng.uniform(p.start_min, p.start_max)
        common = dict(label=label, src=src, dst=dst, start=start,
                      duration=p.duration - start, app=app, seed=label)
        fid = f"{src}-{tag}-c{label}"
        if kind == CBR:
            out.append(TrafficSpec(fid, CBR, rate=p.udp_rate,
                                   packet_size=p.udp_packet_size, **common))
        else:
            out.append(TrafficSpec(fid, AIMD, packet_size=p.tcp_packet_size,
                                   max_window=p.tcp_max_window, **common))
    return out


def scenario_traffic(name: str, seed: int, p: ScenarioParams = ScenarioParams()):
    """``(traffic, background)`` of a built-in scenario."""
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    rng = random.Random(f"{seed}:scenario:{name.replace('-jitter', '').replace('-throughput', '')}")
    bg = replica_background(p.bg_packet_size, p.bg_scale)
    traffic = []
    if name == "epoch-adversarial":
        return _adversarial(seed, p)
    kinds = {"udp-jitter": (CBR,), "tcp-throughput": (AIMD,)}.get(name, (AIMD, CBR))
    for src, dst in (("H1", "H2"), ("H2", "H1")):
        for kind in kinds:
            traffic += _class_flows(kind, src, dst, p, rng, "udp" if kind == CBR else "tcp")
    if name == "late-flow":
        if p.late_start >= p.duration:
            raise ConfigError("late_start must be below duration")
        traffic.append(TrafficSpec("H1-late-c1", AIMD, 1, "H1", "H2",
                                   packet_size=p.tcp_packet_size, start=p.late_start,
                                   duration=p.duration - p.late_start, app="skype",
                                   max_window=p.tcp_max_window, seed=99))
    return traffic, bg


def _adversarial(seed: int, p: ScenarioParams):
    # A Class 1 TCP flow lands on the direct route; an unmeasured burst
    # then starves it until the epoch check moves it.
    rng = random.Random(f"{seed}:scenario:adversarial")
    start = rng.uniform(p.start_min, p.start_max)
    traffic = [TrafficSpec("H1-victim-c1", AIMD, 1, "H1", "H2", packet_size=p.tcp_packet_size,
                           start=start, duration=p.duration - start, app="skype",
                           max_window=p.tcp_max_window, seed=1)]
    bg = replica_background(p.bg_packet_size, p.bg_scale)
    burst_start = 40.0
    if p.duration > burst_start:
        bg.append(BackgroundSpec("s1", "s5", 29 * MBPS, p.bg_packet_size,
                                 start=burst_start, duration=p.duration - burst_start))
    return traffic, bg


# -- configuration ------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    scenario: str = "udp-jitter"
    mode: str = AWARE
    seed: int | None = None
    topology: str | None = None
    out: str | None = None
    train_flows: int = 500
    check_invariants: bool = False
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    params: ScenarioParams = field(default_factory=ScenarioParams)

    def validate(self) -> None:
        if self.mode not in (AWARE, UNAWARE):
            raise ConfigError(f"mode must be {AWARE} or {UNAWARE}, got {self.mode!r}")
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")


_POLICY_KEYS = {f.name for f in fields(PolicyConfig)} - {"class_table"}
_PARAM_KEYS = {f.name for f in fields(ScenarioParams)}
_TOP_KEYS = {"scenario", "mode", "seed", "topology", "out", "train_flows", "check_invariants"}


def _coerce(text: str, like):
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, int) and not isinstance(like, bool):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def parse_config(text: str, base: ExperimentConfig | None = None,
                 source: str = "<config>") -> ExperimentConfig:
    """Flat ``key = value`` lines; ``#`` comments. Unknown keys are errors."""
    cfg = base or ExperimentConfig()
    policy_kw, param_kw = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in _TOP_KEYS:
                like = {"seed": 0, "train_flows": 0, "check_invariants": False}.get(key, "")
                setattr(cfg, key, _coerce(value, like))
            elif key in _POLICY_KEYS:
                policy_kw[key] = _coerce(value, getattr(cfg.policy, key))
            elif key in _PARAM_KEYS:
                param_kw[key] = _coerce(value, getattr(cfg.params, key))
            else:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    try:
        if policy_kw:
            cfg.policy = replace(cfg.policy, **policy_kw)
        if param_kw:
            cfg.params = replace(cfg.params, **param_kw)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), source=str(path))


# -- running ------------------------------------------------------------------------

@lru_cache(maxsize=8)
def trained_tree(n_flows: int = 500, seed: int = 0):
    return classifier.train(generate_traces(n_flows=n_flows, seed=seed))


def simulate(cfg: ExperimentConfig) -> SimResult:
    cfg.validate()
    topo = load_topology(cfg.topology) if cfg.topology else replica_topology()
    tree = trained_tree(cfg.train_flows, cfg.seed) if cfg.mode == AWARE else None
    ctrl = Controller(topo, cfg.policy, cfg.mode, tree, seed=cfg.seed)
    traffic, bg = scenario_traffic(cfg.scenario, cfg.seed, cfg.params)
    sim_cfg = SimConfig(duration=cfg.params.duration, check_invariants=cfg.check_invariants,
                        probe_period=cfg.policy.hard_timeout)
    return Simulator(topo, ctrl, traffic, bg, sim_cfg, cfg.seed).run()


# which flows a scenario reports on
_REPORTED = {
    "udp-jitter": CBR,
    "tcp-throughput": AIMD,
    "mixed-throughput": AIMD,
    "mixed-jitter": CBR,
    "late-flow": AIMD,
    "epoch-adversarial": AIMD,
}


def class_summary(result: SimResult, scenario: str, warmup: float = 100.0) -> dict:
    """Per-class means over the scenario's reported flows.

    ``throughput_bps`` is the mean long-run throughput of the class's flows,
    counting only whole intervals starting at least ``warmup`` seconds after
    the flow; ``jitter_s`` is the run-mean of interval jitter.
    """
    kind = _REPORTED[scenario]
    out = {}
    for label in LABELS:
        ss = [s for s in result.series if s.label == label and s.kind == kind]
        if not ss:
            continue
        tps = [s.long_run_throughput(warmup) for s in ss]
        jit = [s.mean_jitter() for s in ss]
        loss_rows = [r.loss_frac for s in ss for r in s.rows]
        delay_rows = [r.delay_s for s in ss for r in s.rows if not math.isnan(r.delay_s)]
        out[label] = {
            "throughput_bps": _nanmean(tps),
            "jitter_s": _nanmean(jit),
            "loss_frac": _nanmean(loss_rows),
            "delay_s": _nanmean(delay_rows),
            "flows": len(ss),
        }
    return out


def _nanmean(xs) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return sum(xs) / len(xs) if xs else math.nan


def format_summary(cfg: ExperimentConfig, result: SimResult) -> str:
    lines = [f"scenario {cfg.scenario}", f"mode {cfg.mode}", f"seed {cfg.seed}"]
    for k, v in result.counters.items():
        lines.append(f"{k} {v}")
    lines.append("class throughput_bps jitter_s loss_frac delay_s flows")
    for label, row in class_summary(result, cfg.scenario).items():
        lines.append("%d %r %r %r %r %d" % (label, row["throughput_bps"], row["jitter_s"],
                                            row["loss_frac"], row["delay_s"], row["flows"]))
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run one scenario and write ``metrics.csv``, ``events.log`` and
    ``summary.txt`` into the output directory."""
    cfg.validate()
    out = Path(cfg.out or f"runs/{cfg.scenario}-{cfg.mode}-{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    result = simulate(cfg)
    write_metrics_csv(out / "metrics.csv", result.series)
    (out / "events.log").write_text("\n".join(result.log) + "\n")
    (out / "summary.txt").write_text(format_summary(cfg, result))
    return out
