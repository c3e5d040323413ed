"""Run built-in scenarios over a range of seeds and dump per-class summaries
as JSON lines, one record per (scenario, mode, seed)."""
import argparse
import json
import time

from ampf.experiments import ExperimentConfig, class_summary, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenarios", default="udp-jitter,tcp-throughput,mixed-jitter,late-flow")
    ap.add_argument("--modes", default="aware,unaware")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--out", default="sweep.jsonl")
    args = ap.parse_args()
    with open(args.out, "a") as fh:
        for scenario in args.scenarios.split(","):
            for mode in args.modes.split(","):
                if scenario == "late-flow" and mode == "unaware":
                    continue
                for seed in range(args.seeds):
                    t0 = time.time()
                    res = simulate(ExperimentConfig(scenario=scenario, mode=mode, seed=seed))
                    rec = {"scenario": scenario, "mode": mode, "seed": seed,
                           "wall_s": round(time.time() - t0, 2), "counters": res.counters,
                           "summary": class_summary(res, scenario)}
                    if scenario.startswith("mixed"):
                        rec["summary_tcp"] = class_summary(res, "mixed-throughput")
                    if scenario == "late-flow":
                        rec["late"] = res.by_id("H1-late-c1").throughputs()
                    fh.write(json.dumps(rec) + "\n")
                    fh.flush()
                    print(scenario, mode, seed, rec["wall_s"], flush=True)


if __name__ == "__main__":
    main()
