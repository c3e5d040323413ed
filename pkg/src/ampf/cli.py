"""Command-line entry point: ``ampf gen-traces``, ``ampf train``, ``ampf run``
and ``ampf topology``.

Failures exit with status 2 and a single ``error: <kind>: <message>`` line
on stderr.
"""
from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import classifier
from .controller import AWARE, UNAWARE
from .errors import AmpfError
from .experiments import (SCENARIOS, ExperimentConfig, load_config, replica_topology,
                          run_experiment)
from .flows import read_traces, write_traces
from .linkstate import dump_topology
from .traces import generate_traces


@dataclass
class TrainReport:
    tree: classifier.Node
    accuracy: float
    confusion: dict
    n_train: int
    n_test: int
    train_seconds: float

    def text(self) -> str:
        labels = classifier.LABELS
        lines = [f"train {self.n_train}", f"test {self.n_test}",
                 f"train_seconds {self.train_seconds:.4f}",
                 f"depth {classifier.depth(self.tree)}",
                 f"leaves {sum(1 for _ in classifier.leaves(self.tree))}",
                 f"accuracy {self.accuracy!r}",
                 "confusion (rows: true, columns: predicted)",
                 "      " + " ".join(f"{b:>5}" for b in labels)]
        for a in labels:
            lines.append(f"{a:>5} " + " ".join(f"{self.confusion[a, b]:>5}" for b in labels))
        return "\n".join(lines) + "\n"


def train_and_report(train_path, test_path,
                     params: classifier.TrainParams = classifier.TrainParams()) -> TrainReport:
    train = read_traces(train_path)
    test = read_traces(test_path)
    t0 = time.perf_counter()
    tree = classifier.train(train, params)
    elapsed = time.perf_counter() - t0
    return TrainReport(tree, classifier.evaluate(tree, test),
                       classifier.confusion_matrix(tree, test),
                       len(train), len(test), elapsed)


# -- subcommands ----------------------------------------------------------------

def _cmd_gen_traces(args) -> int:
    examples = generate_traces(n_flows=args.n_flows, seed=args.seed, n_forward=args.n_forward)
    write_traces(args.out, examples)
    print(f"wrote {len(examples)} examples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    params = classifier.TrainParams(min_leaf_size=args.min_leaf,
                                    min_gain_ratio=args.min_gain_ratio,
                                    max_depth=args.max_depth)
    report = train_and_report(args.train, args.test, params)
    text = report.text()
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text)
    if args.tree_out:
        Path(args.tree_out).write_text(classifier.dump_tree(report.tree))
    return 0


def _experiment_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg.scenario = args.scenario
    for name in ("mode", "seed", "out"):
        if getattr(args, name) is not None:
            setattr(cfg, name, getattr(args, name))
    if args.topo is not None:
        cfg.topology = args.topo
    if args.check_invariants:
        cfg.check_invariants = True
    cfg.validate()
    return cfg


def _run_one(cfg: ExperimentConfig) -> str:
    t0 = time.perf_counter()
    out = run_experiment(cfg)
    return f"{cfg.scenario} {cfg.mode} seed={cfg.seed} -> {out} ({time.perf_counter() - t0:.1f}s)"


def _cmd_run(args) -> int:
    cfg = _experiment_config(args)
    if args.repeat < 1:
        raise AmpfError("--repeat must be >= 1")
    if args.repeat == 1:
        print(_run_one(cfg))
        return 0
    base = Path(cfg.out or f"runs/{cfg.scenario}-{cfg.mode}")
    cfgs = [replace(cfg, seed=cfg.seed + i, out=str(base / f"seed-{cfg.seed + i}"))
            for i in range(args.repeat)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            for line in pool.map(_run_one, cfgs):
                print(line)
    else:
        for c in cfgs:
            print(_run_one(c))
    return 0


def _cmd_topology(args) -> int:
    text = dump_topology(replica_topology())
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ampf", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-traces", help="write a labeled synthetic trace file")
    g.add_argument("--n-flows", type=int, default=500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-forward", type=int, default=50,
                   help="forward packets observed per flow")
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_traces)

    t = sub.add_parser("train", help="train on one trace file, evaluate on another")
    t.add_argument("train")
    t.add_argument("test")
    t.add_argument("--min-leaf", type=int, default=classifier.TrainParams.min_leaf_size)
    t.add_argument("--min-gain-ratio", type=float, default=classifier.TrainParams.min_gain_ratio)
    t.add_argument("--max-depth", type=int, default=classifier.TrainParams.max_depth)
    t.add_argument("--tree-out", help="write the tree in its text format")
    t.add_argument("--report", help="also write the report to this file")
    t.set_defaults(func=_cmd_train)

    r = sub.add_parser("run", help="run a built-in scenario")
    r.add_argument("scenario", choices=SCENARIOS)
    r.add_argument("--mode", choices=(AWARE, UNAWARE))
    r.add_argument("--seed", type=int)
    r.add_argument("--topo", help="topology file (default: built-in replica)")
    r.add_argument("--out", help="output directory")
    r.add_argument("--config", help="key = value configuration file")
    r.add_argument("--repeat", type=int, default=1, help="run seeds seed..seed+N-1")
    r.add_argument("--jobs", type=int, default=1, help="parallel processes for --repeat")
    r.add_argument("--check-invariants", action="store_true")
    r.set_defaults(func=_cmd_run)

    o = sub.add_parser("topology", help="print the built-in replica topology file")
    o.add_argument("--out")
    o.set_defaults(func=_cmd_topology)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AmpfError, OSError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {type(exc).__name__}: {msg}".replace("\n", " "), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
