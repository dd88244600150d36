"""Command-line entry point: ``relaysum {run,tune,sweep,spectral,correction,dme}``."""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from dataclasses import replace
from pathlib import Path

from relaysum import harness
from relaysum.algorithms import correction_factor
from relaysum.spectral import spectral_report


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _strs(text: str) -> list[str]:
    return [x for x in text.split(",") if x]


def _add_topology(p: argparse.ArgumentParser) -> None:
    p.add_argument("--topology", default="chain", help="chain, ring, star, balanced-binary-tree, "
                   "double-binary-tree, davis, edge-list or complete")
    p.add_argument("--n", type=int, default=8, help="number of workers")
    p.add_argument("--edge-list", help="edge-list file for --topology edge-list")
    p.add_argument("--tree-seed", type=int, help="spanning-tree seed for non-tree graphs")


def _add_experiment(p: argparse.ArgumentParser) -> None:
    _add_topology(p)
    p.add_argument("--algo", default="relay-sgd", choices=harness.ALGORITHMS)
    p.add_argument("--gamma", type=float, default=0.1, help="learning rate (starting point when tuning)")
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--drop-prob", type=float, default=0.0)
    p.add_argument("--lazy-gossip", action="store_true", help="use (W + I)/2 for gossip methods")
    p.add_argument("--gt-variant", default="tracking", choices=("tracking", "j-indexed", "i-indexed"))
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--zeta2", type=float, default=0.0)
    p.add_argument("--sigma2", type=float, default=0.0)
    p.add_argument("--r0", type=float, default=1.0)
    p.add_argument("--problem-seed", type=int, help="defaults to --seed")
    p.add_argument("--rounds", type=int, default=1000)
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)


def _config(args) -> harness.ExperimentConfig:
    return harness.ExperimentConfig(
        topology=args.topology, n=args.n, edge_list=args.edge_list, tree_seed=args.tree_seed,
        algo=args.algo, gamma=args.gamma, momentum=args.momentum, drop_prob=args.drop_prob,
        lazy_gossip=args.lazy_gossip, gt_variant=args.gt_variant, d=args.d, L=args.L, mu=args.mu,
        zeta2=args.zeta2, sigma2=args.sigma2, r0=args.r0,
        problem_seed=args.seed if args.problem_seed is None else args.problem_seed,
        rounds=args.rounds, record_every=args.record_every, seed=args.seed,
        target=getattr(args, "target", None),
    )


def _emit(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> None:
    trace = harness.run(_config(args))
    if args.out:
        trace.write(args.out)
    summary = {"status": trace.status, "final_round": trace.final_round,
               "final_subopt": trace.final_subopt}
    if args.target is not None:
        summary["steps_to_target"] = trace.steps_to(args.target)
    sys.stdout.write(json.dumps(summary) + "\n")


def cmd_tune(args) -> None:
    result = harness.tune_learning_rate(_config(args), args.eps, args.budget)
    _emit({"config": _config(args).to_dict(), "eps": args.eps, **result.to_dict()}, args.out)


def cmd_sweep(args) -> None:
    base = _config(args)
    cells = [
        replace(base, topology=topo, n=n, algo=algo, zeta2=z)
        for topo, n, algo, z in itertools.product(args.topologies, args.ns, args.algos, args.zeta2s)
    ]
    rows = harness.sweep(cells, args.eps, args.budget, args.workers)
    if args.csv:
        Path(args.csv).write_text(harness.sweep_csv(rows))
    text = harness.sweep_jsonl(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_spectral(args) -> None:
    tree = harness.resolve_tree(args.topology, args.n, args.edge_list,
                                args.seed if args.tree_seed is None else args.tree_seed)
    _emit({"topology": args.topology, "seed": args.seed, **spectral_report(tree, seed=args.seed)}, args.out)


def cmd_correction(args) -> None:
    tree = harness.resolve_tree(args.topology, args.n, args.edge_list,
                                args.seed if args.tree_seed is None else args.tree_seed)
    a, corr = correction_factor(tree, tol=args.tol, max_rounds=args.max_rounds)
    _emit({"topology": args.topology, "n": tree.n, "a": a, "correction": corr}, args.out)


def cmd_dme(args) -> None:
    tree = harness.resolve_tree(args.topology, args.n, args.edge_list,
                                args.seed if args.tree_seed is None else args.tree_seed)
    result = harness.dme_experiment(tree, args.horizons, args.replicates, args.seed)
    _emit({"topology": args.topology, **result}, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relaysum", description="Decentralized optimization experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment and write its trace")
    _add_experiment(p)
    p.add_argument("--target", type=float, help="stop once the suboptimality reaches this value")
    p.add_argument("--out", help="JSON-lines trace file")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("tune", help="tune the learning rate on a factor-2 grid")
    _add_experiment(p)
    p.add_argument("--eps", type=float, default=1e-6, help="suboptimality target")
    p.add_argument("--budget", type=int, default=24, help="maximum number of trials")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("sweep", help="tune and measure a grid of experiments")
    _add_experiment(p)
    p.add_argument("--topologies", type=_strs, default=["chain"])
    p.add_argument("--ns", type=_ints, default=[8])
    p.add_argument("--algos", type=_strs, default=["relay-sgd"])
    p.add_argument("--zeta2s", type=_floats, default=[0.0])
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--budget", type=int, default=24)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--csv", help="CSV summary file")
    p.add_argument("--out", help="JSON-lines file, one row per cell")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("spectral", help="spectral constants of the relay mixing matrix")
    _add_topology(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("correction", help="learning-rate correction factor of a tree")
    _add_topology(p)
    p.add_argument("--seed", type=int, default=0, help="spanning-tree seed for non-tree graphs")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-rounds", type=int, default=10_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_correction)

    p = sub.add_parser("dme", help="distributed mean estimation error versus rounds")
    _add_topology(p)
    p.add_argument("--horizons", type=_ints, default=[16, 32, 64, 128, 256, 512, 1024])
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dme)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"relaysum {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
