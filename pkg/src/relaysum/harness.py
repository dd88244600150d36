"""Experiment plumbing: configure, run, tune and sweep decentralized quadratics."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from relaysum import rng
from relaysum import algorithms as alg
from relaysum.quadratics import QuadraticProblem, generate_quadratics
from relaysum.topology import (
    Graph,
    Tree,
    build_topology,
    davis_southern_women,
    double_binary_trees,
    metropolis_hastings,
    read_edge_list,
    spanning_tree,
)

ALGORITHMS = ("relay-sgd", "relay-sgd-robust", "relay-grad", "dpsgd", "d2", "gradient-tracking",
              "sgp", "all-reduce")
RELAY_FAMILY = ("relay-sgd", "relay-sgd-robust", "relay-grad")
GOSSIP_FAMILY = ("dpsgd", "d2", "gradient-tracking")
TOPOLOGIES = ("chain", "ring", "star", "balanced-binary-tree", "double-binary-tree", "davis",
              "edge-list", "complete")
DIVERGENCE_NORM = 1e12
CSV_HEADER = ("topology", "n", "algo", "zeta2", "sigma2", "gamma", "steps", "status")


class ConfigError(ValueError):
    """Raised for invalid or incompatible experiment settings, before any compute."""


class TuningError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # topology
    topology: str = "chain"
    n: int = 8
    edge_list: str | None = None
    tree_seed: int | None = None
    # algorithm
    algo: str = "relay-sgd"
    gamma: float = 0.1
    momentum: float = 0.0
    drop_prob: float = 0.0
    lazy_gossip: bool = False
    gt_variant: str = "tracking"
    # problem
    d: int = 10
    L: float = 1.0
    mu: float = 0.5
    zeta2: float = 0.0
    sigma2: float = 0.0
    r0: float = 1.0
    problem_seed: int = 0
    # execution
    rounds: int = 1000
    record_every: int = 1
    seed: int = 0
    target: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


# -- setup -----------------------------------------------------------------------


@dataclass
class _Setup:
    n: int
    graph: Graph | None
    tree: Tree | None
    trees: object | None
    W: np.ndarray | None


def build_graph(kind: str, n: int, edge_list: str | None = None) -> Graph:
    """Communication graph for a topology name (``double-binary-tree`` excluded)."""
    if kind == "davis":
        return davis_southern_women()
    if kind == "edge-list":
        if not edge_list:
            raise ConfigError("topology 'edge-list' needs an edge_list path")
        return read_edge_list(edge_list)
    if kind == "complete":
        return Graph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])
    try:
        return build_topology(kind, n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def resolve_tree(kind: str, n: int, edge_list: str | None = None, tree_seed: int | None = None) -> Tree:
    """The topology itself when it is a tree, else a seeded spanning tree of it."""
    graph = build_graph(kind, n, edge_list)
    if graph.is_tree:
        return Tree.from_graph(graph)
    if tree_seed is None:
        raise ConfigError(f"topology {kind!r} is not a tree; pass a spanning-tree seed")
    if not graph.is_connected:
        raise ConfigError("communication graph is disconnected")
    return spanning_tree(graph, tree_seed)


def validate(cfg: ExperimentConfig) -> _Setup:
    """Check a config and build the communication structures it needs."""
    if cfg.algo not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {cfg.algo!r}; expected one of {ALGORITHMS}")
    if cfg.topology not in TOPOLOGIES:
        raise ConfigError(f"unknown topology {cfg.topology!r}; expected one of {TOPOLOGIES}")
    if cfg.rounds < 0 or cfg.record_every < 1:
        raise ConfigError("rounds must be >= 0 and record_every >= 1")
    if cfg.gamma < 0 or not math.isfinite(cfg.gamma):
        raise ConfigError(f"gamma must be a finite nonnegative number, got {cfg.gamma}")
    if not 0 <= cfg.momentum < 1:
        raise ConfigError(f"momentum must lie in [0, 1), got {cfg.momentum}")
    if not 0 <= cfg.drop_prob < 1:
        raise ConfigError(f"drop_prob must lie in [0, 1), got {cfg.drop_prob}")
    if cfg.gt_variant not in alg.GT_VARIANTS:
        raise ConfigError(f"unknown gradient-tracking variant {cfg.gt_variant!r}")
    if cfg.target is not None and cfg.target <= 0:
        raise ConfigError("target must be positive")
    if cfg.drop_prob > 0 and cfg.algo in ("relay-sgd", "relay-grad", "sgp", "all-reduce"):
        raise ConfigError(f"{cfg.algo} does not model dropped messages; use relay-sgd-robust or a gossip method")

    if cfg.topology == "double-binary-tree":
        if cfg.algo != "relay-sgd":
            raise ConfigError("double binary trees are only wired up for relay-sgd")
        if cfg.n < 1:
            raise ConfigError("n must be >= 1")
        return _Setup(cfg.n, None, None, double_binary_trees(cfg.n), None)

    graph = build_graph(cfg.topology, cfg.n, cfg.edge_list)
    if not graph.is_connected:
        raise ConfigError("communication graph is disconnected")
    n = graph.n
    setup = _Setup(n, graph, None, None, None)

    if cfg.algo in RELAY_FAMILY:
        if graph.is_tree:
            setup.tree = Tree.from_graph(graph)
        elif cfg.tree_seed is None:
            raise ConfigError(
                f"{cfg.algo} needs a tree; topology {cfg.topology!r} is not one, so pass a spanning-tree seed"
            )
        else:
            setup.tree = spanning_tree(graph, cfg.tree_seed)
    elif cfg.algo in GOSSIP_FAMILY:
        W = metropolis_hastings(graph)
        if cfg.lazy_gossip:
            W = 0.5 * (W + np.eye(n))
        if cfg.algo == "d2":
            try:
                alg.check_d2_matrix(W)
            except alg.EigenvalueConditionError as exc:
                raise ConfigError(f"{exc} (set lazy_gossip)") from None
        setup.W = W
    elif cfg.algo == "sgp" and n & (n - 1):
        raise ConfigError(f"sgp needs a power-of-two number of workers, got n={n}")
    return setup


def build_problem(cfg: ExperimentConfig, n: int) -> QuadraticProblem:
    return generate_quadratics(n, cfg.d, L=cfg.L, mu=cfg.mu, zeta2=cfg.zeta2, r0=cfg.r0,
                               seed=cfg.problem_seed, sigma2=cfg.sigma2)


# -- run -------------------------------------------------------------------------


@dataclass
class Trace:
    config: dict
    records: list[dict] = field(default_factory=list)
    status: str = "completed"
    final_round: int = 0

    def steps_to(self, eps: float) -> int | None:
        for rec in self.records:
            if rec["subopt"] <= eps:
                return rec["round"]
        return None

    @property
    def final_subopt(self) -> float:
        return self.records[-1]["subopt"] if self.records else math.nan

    def to_jsonl(self) -> str:
        lines = [json.dumps({"config": self.config}, sort_keys=True)]
        lines += [json.dumps(r) for r in self.records]
        lines.append(json.dumps({"status": self.status, "final_round": self.final_round}))
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        lines = [json.loads(x) for x in text.splitlines() if x.strip()]
        tail = lines[-1]
        return cls(lines[0]["config"], lines[1:-1], tail["status"], tail["final_round"])


class _Runner:
    """Holds the algorithm state and advances it one round at a time."""

    def __init__(self, cfg: ExperimentConfig, setup: _Setup, problem: QuadraticProblem):
        self.cfg, self.setup, self.problem = cfg, setup, problem
        n, d = setup.n, problem.d
        x0 = np.zeros(d)
        self.mom = np.zeros((n, d))
        if setup.trees is not None:
            self.state = alg.DoubleTreeState.init(setup.trees, np.tile(x0, (n, 1)))
        elif cfg.algo in RELAY_FAMILY:
            self.state = alg.RelayState.init(setup.tree, x0)
        else:
            self.state = alg.GossipState.init(x0, n)
        self.n_msgs = len(setup.tree.directed_edges) if setup.tree is not None else 0

    @property
    def models(self) -> np.ndarray:
        st = self.state
        return st.models if isinstance(st, alg.GossipState) else st.x

    def step(self, t: int) -> None:
        cfg, p = self.cfg, self.problem
        noise = rng.gradient_noise(cfg.seed, t, self.setup.n, p.d, p.sigma2)
        g = p.gradients(self.models, noise)
        gamma, alpha, algo = cfg.gamma, cfg.momentum, cfg.algo
        st = self.state
        if self.setup.trees is not None:
            self.mom, u = alg.local_momentum_update(self.mom, g, alpha, gamma)
            self.state = alg.double_tree_round(st, self.setup.trees, u)
        elif algo == "relay-sgd":
            self.mom, u = alg.local_momentum_update(self.mom, g, alpha, gamma)
            self.state = alg.relay_sgd_round(st, self.setup.tree, u)
        elif algo == "relay-sgd-robust":
            self.mom, u = alg.local_momentum_update(self.mom, g, alpha, gamma)
            dropped = rng.drop_mask(cfg.seed, t, self.n_msgs, cfg.drop_prob)
            self.state = alg.relay_sgd_robust_round(st, self.setup.tree, u, dropped)
        elif algo == "relay-grad":
            self.state = alg.relay_grad_round(st, self.setup.tree, g, gamma)
        elif algo in GOSSIP_FAMILY:
            W = self.setup.W
            if cfg.drop_prob > 0:
                n = self.setup.n
                W = alg.drop_gossip_matrix(W, rng.drop_mask(cfg.seed, t, n * n, cfg.drop_prob).reshape(n, n))
            if algo == "dpsgd":
                self.state = alg.dpsgd_round(st, W, g, gamma, alpha)
            elif algo == "d2":
                self.state = alg.d2_round(st, W, g, gamma, alpha, check=False)
            else:
                self.state = alg.gradient_tracking_round(st, W, g, gamma, alpha, cfg.gt_variant)
        elif algo == "sgp":
            self.state = alg.sgp_round(st, self.setup.n, g, gamma, alpha)
        else:
            self.state = alg.all_reduce_round(st, g, gamma, alpha)


def _record(problem: QuadraticProblem, X: np.ndarray, t: int) -> dict:
    x_bar = X.sum(axis=0) / X.shape[0]
    dev = X - x_bar
    return {
        "round": t,
        "subopt": problem.suboptimality(x_bar),
        "consensus": float(np.einsum("ij,ij->", dev, dev) / X.shape[0]),
        "max_subopt": float(problem.worker_suboptimality(X).max()),
    }


def run(cfg: ExperimentConfig, problem: QuadraticProblem | None = None) -> Trace:
    """Execute ``cfg.rounds`` rounds, recording every ``record_every`` rounds and at the end.

    Stops early when a recorded suboptimality reaches ``cfg.target`` or when
    any model becomes non-finite or exceeds norm ``1e12``.
    """
    setup = validate(cfg)
    if problem is None:
        problem = build_problem(cfg, setup.n)
    runner = _Runner(cfg, setup, problem)
    trace = Trace(cfg.to_dict())
    trace.records.append(_record(problem, runner.models, 0))
    if cfg.target is not None and trace.records[-1]["subopt"] <= cfg.target:
        trace.status = "reached-target"
        return trace
    for t in range(cfg.rounds):
        runner.step(t)
        X = runner.models
        done = t + 1
        if not np.isfinite(X).all() or np.abs(X).max() > DIVERGENCE_NORM:
            trace.status = "diverged"
            trace.final_round = done
            return trace
        if done % cfg.record_every == 0 or done == cfg.rounds:
            rec = _record(problem, X, done)
            trace.records.append(rec)
            if cfg.target is not None and rec["subopt"] <= cfg.target:
                trace.status = "reached-target"
                trace.final_round = done
                return trace
    trace.final_round = cfg.rounds
    return trace


@dataclass(frozen=True)
class Steps:
    steps: int | None
    status: str  # reached-target, diverged or exhausted
    final_subopt: float


def steps_to_target(cfg: ExperimentConfig, eps: float, problem: QuadraticProblem | None = None) -> Steps:
    if eps <= 0:
        raise ConfigError("target must be positive")
    trace = run(replace(cfg, target=eps), problem)
    if trace.status == "reached-target":
        return Steps(trace.steps_to(eps), "reached-target", trace.final_subopt)
    if trace.status == "diverged":
        return Steps(None, "diverged", math.inf)
    return Steps(None, "exhausted", trace.final_subopt)


# -- tuning ----------------------------------------------------------------------


@dataclass
class TuneResult:
    tried: list[tuple[float, Steps]]
    gamma: float
    steps: int | None
    sandwiched: bool

    def to_dict(self) -> dict:
        return {
            "tried": [{"gamma": g, "steps": s.steps, "status": s.status, "final_subopt": s.final_subopt}
                      for g, s in self.tried],
            "gamma": self.gamma,
            "steps": self.steps,
            "sandwiched": self.sandwiched,
        }


def _score(s: Steps) -> tuple:
    if s.status == "reached-target":
        return (0, s.steps)
    if s.status == "exhausted" and math.isfinite(s.final_subopt):
        return (1, s.final_subopt)
    return (2, 0.0)


def tune_learning_rate(cfg: ExperimentConfig, eps: float, budget: int = 24,
                       gamma0: float | None = None) -> TuneResult:
    """Factor-2 grid search around ``gamma0`` (default ``cfg.gamma``).

    Trials are ranked by steps to ``eps``; trials that never reach it rank
    after all that do (by final suboptimality), and diverged trials rank last.
    Once some trial has reached the target, later trials are capped at that
    many rounds since they could not win anyway. The search walks toward the
    best grid point until both of its neighbours have been tried.
    """
    if budget < 3:
        raise ConfigError("tuning budget must allow at least 3 trials")
    base = cfg.gamma if gamma0 is None else gamma0
    if base <= 0:
        raise ConfigError("tuning needs a positive starting learning rate")
    setup = validate(cfg)
    problem = build_problem(cfg, setup.n)
    results: dict[int, Steps] = {}

    def trial(k: int) -> None:
        best = [s.steps for s in results.values() if s.status == "reached-target"]
        rounds = min([cfg.rounds] + best)
        results[k] = steps_to_target(replace(cfg, gamma=base * 2.0**k, rounds=rounds), eps, problem)

    def best_k() -> int:
        return min(sorted(results), key=lambda k: _score(results[k]))

    trial(0)
    sandwiched = False
    while True:
        k = best_k()
        missing = [j for j in (k - 1, k + 1) if j not in results]
        if not missing:
            sandwiched = True
            break
        if len(results) >= budget:
            break
        trial(missing[0])

    tried = [(base * 2.0**k, results[k]) for k in sorted(results)]
    if all(s.status == "diverged" for _, s in tried):
        raise TuningError(f"every trial diverged; tried gammas {[g for g, _ in tried]}")
    k = best_k()
    return TuneResult(tried, base * 2.0**k, results[k].steps, sandwiched)


# -- sweeps ----------------------------------------------------------------------


def _sweep_cell(args) -> dict:
    cfg_dict, eps, budget = args
    row = {key: cfg_dict.get(key) for key in ("topology", "n", "algo", "zeta2", "sigma2")}
    try:
        cfg = ExperimentConfig.from_dict(cfg_dict)
        tuned = tune_learning_rate(cfg, eps, budget)
        row.update(gamma=tuned.gamma, steps=tuned.steps,
                   status="reached-target" if tuned.steps is not None else "exhausted",
                   sandwiched=tuned.sandwiched, config=cfg.to_dict())
    except Exception as exc:  # noqa: BLE001 - a failing cell must not abort the sweep
        row.update(gamma=None, steps=None, status=f"error: {exc}", sandwiched=False, config=cfg_dict)
    return row


def sweep(cells: list[ExperimentConfig | dict], eps: float, budget: int = 24, workers: int = 1) -> list[dict]:
    """Tune and measure every cell; rows come back in cell order."""
    jobs = [((c.to_dict() if isinstance(c, ExperimentConfig) else dict(c)), eps, budget) for c in cells]
    if workers <= 1 or len(jobs) <= 1:
        return [_sweep_cell(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_cell, jobs))


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow(["" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k])
                         for k in CSV_HEADER])
    return buf.getvalue()


def sweep_jsonl(rows: list[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


# -- distributed mean estimation -------------------------------------------------


def dme_experiment(tree: Tree, horizons: list[int], replicates: int = 100, seed: int = 0,
                   d: int = 1, mean: float = 1.0) -> dict:
    """Mean squared error of relayed mean estimation at each horizon ``T``.

    Each worker draws one ``N(mean, 1)`` sample per round. The error is
    averaged over workers, coordinates and ``replicates`` independent runs;
    ``slope`` is the least-squares log-log slope of the error against the
    total number of samples ``n * T``.
    """
    horizons = sorted(set(int(t) for t in horizons))
    if not horizons or horizons[0] < 1:
        raise ConfigError("horizons must be positive integers")
    mse = np.zeros(len(horizons))
    where = {t: k for k, t in enumerate(horizons)}
    for rep in range(replicates):
        state = alg.DmeState.init(tree, d)
        for r in range(horizons[-1]):
            state = alg.relay_dme_round(state, tree, rng.samples(seed, rep, r, tree.n, d, mean))
            k = where.get(r + 1)
            if k is not None:
                mse[k] += float(((state.estimate() - mean) ** 2).mean())
    mse /= replicates
    slope = float(np.polyfit(np.log(tree.n * np.array(horizons, float)), np.log(mse), 1)[0]) \
        if len(horizons) > 1 else math.nan
    return {"n": tree.n, "T": horizons, "mse": mse.tolist(), "slope": slope,
            "replicates": replicates, "seed": seed}
