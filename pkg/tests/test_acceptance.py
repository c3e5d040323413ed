"""End-to-end acceptance checks. Each test prints one PASS/FAIL line.

Scenario runs are cached per (traffic, mode, seed) for the whole session;
mixed-jitter and mixed-throughput share their traffic, so one run serves
both. The full module takes tens of minutes on one core.
"""
import hashlib
import math
import random
import time

import pytest

from ampf import classifier
from ampf.controller import AWARE, UNAWARE
from ampf.experiments import ExperimentConfig, class_summary, simulate
from ampf.flows import FeatureVector
from ampf.simulator import write_metrics_csv
from ampf.traces import generate_traces

from eq_cases import CASES, check
from graphs import random_graph, yen_matches_oracle

pytestmark = pytest.mark.acceptance

SEEDS = range(10)
MIN_BW = {1: 10e6, 2: 5e6, 3: 2e6, 4: 1e6}
_RUNS = {}


def _traffic_key(scenario):
    return "mixed" if scenario.startswith("mixed") else scenario


def get_run(scenario, mode, seed):
    key = (_traffic_key(scenario), mode, seed)
    if key not in _RUNS:
        _RUNS[key] = simulate(ExperimentConfig(scenario, mode, seed))
    return _RUNS[key]


def digest(result, tmp_path):
    path = tmp_path / f"m{len(list(tmp_path.iterdir()))}.csv"
    write_metrics_csv(path, result.series)
    return (hashlib.sha256(path.read_bytes()).hexdigest(),
            hashlib.sha256("\n".join(result.log).encode()).hexdigest())


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    return emit


def test_c1_classifier_accuracy(report):
    t0 = time.perf_counter()
    tree = classifier.train(generate_traces(n_flows=500, seed=0))
    acc = classifier.evaluate(tree, generate_traces(n_flows=100, seed=1))
    elapsed = time.perf_counter() - t0
    fields = set(FeatureVector.__dataclass_fields__)
    structural = not fields & {"port", "src_port", "dst_port", "protocol"}
    ok = acc >= 0.98 and elapsed < 5.0 and structural
    report(1, ok, f"accuracy {acc:.3f} (>= 0.98), {elapsed:.2f}s (< 5s), "
                  f"features {sorted(fields)}")
    assert ok


def test_c2_formula_cases(report):
    failed = [name for name, thunk, expected in CASES if not check(thunk, expected, 1e-9)]
    ok = len(CASES) == 20 and not failed
    report(2, ok, f"{len(CASES) - len(failed)}/{len(CASES)} hand cases exact to 1e-9")
    assert ok, failed


def test_c3_yen_oracle(report):
    rng = random.Random("acceptance-yen")
    t0 = time.perf_counter()
    bad = 0
    for _ in range(200):
        n = rng.randint(2, 8)
        topo, cm = random_graph(rng, n, p_edge=rng.uniform(0.3, 0.9),
                                integer_costs=rng.random() < 0.5)
        bad += not yen_matches_oracle(topo, cm, "s0", f"s{n - 1}", 5)
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 30.0
    report(3, ok, f"{200 - bad}/200 graphs match enumeration, {elapsed:.2f}s (< 30s)")
    assert ok


def _class1_min_jitter(summary):
    jit = {c: v["jitter_s"] for c, v in summary.items()}
    return jit[1] < jit[4] and all(jit[1] < jit[c] for c in jit if c != 1)


def test_c4_jitter_ordering(report):
    lines, ok = [], True
    for scenario in ("udp-jitter", "mixed-jitter"):
        aware = sum(_class1_min_jitter(class_summary(get_run(scenario, AWARE, s), scenario))
                    for s in SEEDS)
        unaware_miss = sum(not _class1_min_jitter(
            class_summary(get_run(scenario, UNAWARE, s), scenario)) for s in SEEDS)
        ok &= aware >= 9 and unaware_miss >= 3
        lines.append(f"{scenario}: aware ordered {aware}/10 (>= 9), "
                     f"unaware not ordered {unaware_miss}/10 (>= 3)")
    report(4, ok, "; ".join(lines))
    assert ok


def _all_minimums_met(summary):
    return all(v["throughput_bps"] >= MIN_BW[c] for c, v in summary.items())


def test_c5_throughput_guarantee(report):
    lines, ok = [], True
    for scenario in ("tcp-throughput", "mixed-throughput"):
        aware = sum(_all_minimums_met(class_summary(get_run(scenario, AWARE, s), scenario))
                    for s in SEEDS)
        unaware_miss = sum(not _all_minimums_met(
            class_summary(get_run(scenario, UNAWARE, s), scenario)) for s in SEEDS)
        ok &= aware >= 9 and unaware_miss >= 5
        lines.append(f"{scenario}: aware all minimums {aware}/10 (>= 9), "
                     f"unaware some class short {unaware_miss}/10 (>= 5)")
    report(5, ok, "; ".join(lines))
    assert ok


def late_flow_reaches_minimum(result, start=450.0, interval=100.0):
    """The late flow's throughput in one of the first two whole intervals
    after its start reaches the Class 1 minimum."""
    s = result.by_id("H1-late-c1")
    first = math.ceil(start / interval)
    window = [r.throughput_bps for r in s.rows[first:first + 2]]
    return max(window) >= MIN_BW[1], window


def test_c6_late_flow(report):
    hits, worst = 0, math.inf
    for s in SEEDS:
        ok_seed, window = late_flow_reaches_minimum(get_run("late-flow", AWARE, s))
        hits += ok_seed
        worst = min(worst, max(window))
    ok = hits == 10
    report(6, ok, f"late Class 1 flow >= 10 Mbps within two intervals in {hits}/10 seeds "
                  f"(weakest {worst / 1e6:.2f} Mbps)")
    assert ok


def test_c7_reroute_loss(report):
    # every replica scenario at every seed; late-flow and the adversarial
    # case in aware mode
    for scenario in ("udp-jitter", "tcp-throughput", "mixed-jitter"):
        for mode in (AWARE, UNAWARE):
            for s in SEEDS:
                get_run(scenario, mode, s)
    for s in SEEDS:
        get_run("late-flow", AWARE, s)
    get_run("epoch-adversarial", AWARE, 0)
    lost = sum(r.counters["reroute_lost"] for r in _RUNS.values())
    sent = sum(r.counters["sent"] for r in _RUNS.values())
    reroutes = sum(sum(" reroute " in line for line in r.log) for r in _RUNS.values())
    frac = lost / sent
    ok = frac <= 1e-5
    report(7, ok, f"{lost} packets lost in reroutes out of {sent} sent "
                  f"({frac:.2e} <= 1e-05) over {len(_RUNS)} runs with {reroutes} reroutes")
    assert ok


def test_c8_determinism(report, tmp_path):
    cases = [(sc, AWARE, 0) for sc in ("udp-jitter", "tcp-throughput", "mixed-jitter",
                                       "late-flow", "epoch-adversarial")]
    cases += [("udp-jitter", UNAWARE, 0), ("mixed-throughput", UNAWARE, 0)]
    same = 0
    for sc, mode, seed in cases:
        first = digest(get_run(sc, mode, seed), tmp_path)
        again = digest(simulate(ExperimentConfig(sc, mode, seed)), tmp_path)
        same += first == again
    ok = same == len(cases)
    report(8, ok, f"{same}/{len(cases)} re-runs bitwise identical (CSV and event log)")
    assert ok


def test_c9_invariants(report):
    cfg = ExperimentConfig("mixed-jitter", AWARE, 0, check_invariants=True)
    try:
        result = simulate(cfg)
        violation = None
    except AssertionError as exc:  # InvariantViolation or a reservation mismatch
        result, violation = None, exc
    ok = violation is None
    detail = (f"{result.counters['events']} events checked, sent {result.counters['sent']} = "
              f"delivered + dropped + in flight" if ok else f"violation: {violation}")
    report(9, ok, f"1000 s mixed run with per-event checks: {detail}")
    assert ok


def test_c10_epoch_reroute(report):
    result = get_run("epoch-adversarial", AWARE, 0)
    victim = [line.split() for line in result.log if "H1-victim-c1" in line]
    installs = [float(f[0]) for f in victim if f[1] in ("assign", "keep")]
    reroutes = [float(f[0]) for f in victim if f[1] == "reroute"]
    ok = bool(reroutes)
    detail = "no reroute"
    if reroutes:
        t = reroutes[0]
        prior = max(x for x in installs if x < t)
        # rules go live one control latency after the decision
        on_epoch = math.isclose(t, prior + 0.001 + 100.0 - 10.0, abs_tol=1e-6)
        rows = result.by_id("H1-victim-c1").rows
        i = int(t // 100.0)
        before, after = rows[i].throughput_bps, rows[i + 1].throughput_bps
        ok = on_epoch and after > before
        detail = (f"rerouted at {t:.3f}s = install + t - 10; throughput "
                  f"{before / 1e6:.2f} -> {after / 1e6:.2f} Mbps")
    report(10, ok, detail)
    assert ok
