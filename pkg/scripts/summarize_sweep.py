"""Tabulate a sweep.py JSON-lines file: per-seed class jitter/throughput and
seed counts for the ordering, minimum-bandwidth and late-flow checks."""
import argparse
import json
import math
from collections import defaultdict

MIN_BW = {"1": 10e6, "2": 5e6, "3": 2e6, "4": 1e6}


def class1_min_jitter(summary):
    jit = {c: v["jitter_s"] for c, v in summary.items()}
    return all(jit["1"] < j for c, j in jit.items() if c != "1")


def all_minimums(summary):
    return all(v["throughput_bps"] >= MIN_BW[c] for c, v in summary.items())


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("path")
    args = ap.parse_args()
    tally = defaultdict(lambda: [0, 0])
    lost = sent = 0
    for line in open(args.path):
        r = json.loads(line)
        sc, mode = r["scenario"], r["mode"]
        lost += r["counters"]["reroute_lost"]
        sent += r["counters"]["sent"]
        s = r["summary"]
        jit = " ".join(f"{c}:{v['jitter_s'] * 1e3:.3f}" for c, v in sorted(s.items()))
        tp = " ".join(f"{c}:{v['throughput_bps'] / 1e6:.2f}" for c, v in sorted(s.items()))
        print(f"{sc:16} {mode:8} {r['seed']:2}  jitter_ms {jit}  Mbps {tp}")
        if sc.endswith("jitter"):
            t = tally[sc, mode, "class 1 min jitter"]
            t[0] += class1_min_jitter(s)
            t[1] += 1
        if sc == "tcp-throughput" or "summary_tcp" in r:
            name = "tcp-throughput" if sc == "tcp-throughput" else "mixed-throughput"
            t = tally[name, mode, "all minimums met"]
            t[0] += all_minimums(r.get("summary_tcp", s))
            t[1] += 1
        if "late" in r:
            first = math.ceil(450 / 100)
            t = tally[sc, mode, "late flow >= 10 Mbps"]
            t[0] += max(r["late"][first:first + 2]) >= 10e6
            t[1] += 1
    print()
    for (sc, mode, what), (hit, n) in sorted(tally.items()):
        print(f"{sc:16} {mode:8} {what}: {hit}/{n}")
    if sent:
        print(f"reroute loss {lost}/{sent} = {lost / sent:.2e}")


if __name__ == "__main__":
    main()
