"""Acceptance suite: twelve end-to-end criteria, each checked at its stated tolerance.

Run under pytest (one pass/fail line per criterion is printed in the terminal
summary) or directly with ``python tests/test_acceptance.py``.

Every criterion function returns ``(passed, detail, artifacts)`` where
``artifacts`` maps file names to the bytes that criterion produced. The
determinism criterion reruns the others with a different BLAS thread count
and compares those bytes.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

sys.path.insert(0, str(Path(__file__).parent))

from oracles import delayed_average, random_tree_edges  # noqa: E402
from relaysum import rng  # noqa: E402
from relaysum.algorithms import (  # noqa: E402
    GossipState,
    RelayState,
    correction_factor,
    relay_sgd_robust_round,
    relay_sgd_round,
    sgp_exchange,
)
from relaysum.harness import (  # noqa: E402
    ExperimentConfig,
    build_problem,
    dme_experiment,
    run,
    tune_learning_rate,
)
from relaysum.spectral import build_augmented, find_effective_gap, stationary_pi  # noqa: E402
from relaysum.topology import Tree, build_topology  # noqa: E402


def _dumps(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True) + "\n").encode()


def _tune(cfg: ExperimentConfig, eps: float):
    return tune_learning_rate(cfg, eps, budget=24)


# -- criteria --------------------------------------------------------------------


def crit_oracle_equivalence():
    gen = np.random.default_rng(20240101)
    worst = 0.0
    for k in range(50):
        n = int(gen.integers(2, 13))
        edges = random_tree_edges(n, gen)
        tree = Tree(n, edges)
        p = build_problem(ExperimentConfig(n=n, d=5, zeta2=1.0, r0=3.0, problem_seed=k), n)
        gamma = 0.1
        # both warmup conventions against their own oracle
        for warmup in ("count", "clamp"):
            ref = delayed_average(n, edges, np.zeros(5), lambda t, X: p.gradients(X), gamma, 50,
                                  clamp=warmup == "clamp")
            s = RelayState.init(tree, np.zeros(5))
            for t in range(50):
                s = relay_sgd_round(s, tree, -gamma * p.gradients(s.x), warmup=warmup)
                worst = max(worst, float(np.abs(s.x - ref[t + 1]).max() / np.abs(ref[t + 1]).max()))
    return worst <= 1e-10, f"max relative deviation {worst:.2e} over 50 trees, both warmups", \
        {"oracle.json": _dumps({"max_rel_dev": worst})}


def crit_heterogeneity():
    base = ExperimentConfig(topology="chain", n=16, sigma2=0.0, r0=10.0, gamma=0.1, rounds=200_000)
    zetas = (0.01, 1.0, 100.0)
    out, steps = {}, {}
    for algo in ("relay-sgd", "d2", "dpsgd"):
        for z in zetas:
            res = _tune(replace(base, algo=algo, zeta2=z), 1e-6)
            out[f"{algo}@{z}"] = res.to_dict()
            steps[algo, z] = res.steps

    def spread(algo):
        s = [steps[algo, z] for z in zetas]
        return max(s) / min(s) - 1 if None not in s else float("inf")

    dp = [steps["dpsgd", z] for z in zetas]
    ok = spread("relay-sgd") <= 0.05 and spread("d2") <= 0.05 and None not in dp and dp[0] < dp[1] < dp[2]
    detail = (f"relay-sgd {[steps['relay-sgd', z] for z in zetas]} (spread {spread('relay-sgd'):.1%}), "
              f"d2 {[steps['d2', z] for z in zetas]} (spread {spread('d2'):.1%}), dpsgd {dp}")
    return ok, detail, {"heterogeneity.json": _dumps(out)}


def crit_topology_scaling():
    out, steps = {}, {}
    for topo in ("chain", "balanced-binary-tree"):
        for n in (8, 32):
            cfg = ExperimentConfig(topology=topo, n=n, zeta2=1.0, r0=10.0, gamma=0.1, rounds=100_000)
            res = _tune(cfg, 1e-6)
            out[f"{topo}@{n}"] = res.to_dict()
            steps[topo, n] = res.steps
    chain = steps["chain", 32] / steps["chain", 8]
    tree = steps["balanced-binary-tree", 32] / steps["balanced-binary-tree", 8]
    return chain >= 3 and tree <= 2, f"chain ratio {chain:.2f} (>= 3), tree ratio {tree:.2f} (<= 2)", \
        {"scaling.json": _dumps(out)}


def crit_spanning_tree_parity():
    base = ExperimentConfig(topology="davis", n=32, zeta2=0.1, sigma2=0.1, r0=1.0, gamma=0.1,
                            rounds=20_000, seed=0, problem_seed=0)
    d2 = _tune(replace(base, algo="d2", lazy_gossip=True), 1e-5)
    out = {"d2": d2.to_dict()}
    relay = []
    for seed in (0, 1, 2):
        res = _tune(replace(base, tree_seed=seed), 1e-5)
        out[f"relay-sgd@tree{seed}"] = res.to_dict()
        relay.append(res.steps)
    ok = d2.steps is not None and all(s is not None and s <= 2 * d2.steps for s in relay)
    return ok, f"relay-sgd steps {relay} vs d2 {d2.steps} (limit {2 * (d2.steps or 0)})", \
        {"davis.json": _dumps(out)}


def crit_spectral_certificate():
    worst_norm, worst_pi, checked, reports = -np.inf, 0.0, 0, []
    for kind in ("chain", "star", "balanced-binary-tree"):
        for n in range(2, 17):
            W = build_augmented(build_topology(kind, n)).W
            pi = stationary_pi(W)
            gap = find_effective_gap(W, pi)
            reports.append({"tree": kind, "n": n, "p": gap.p, "m": gap.m, "lambda2": gap.lambda2_mod,
                            "pi": pi.tolist()})
            P = W - np.outer(np.ones(len(pi)), pi)
            norm = np.linalg.norm(np.linalg.matrix_power(P, gap.m), 2)
            worst_norm = max(worst_norm, norm - (1 - gap.p) ** gap.m)
            worst_pi = max(worst_pi, float(np.abs(pi @ W - pi).max()), float(np.ptp(pi[:n])))
            checked += 1
    ok = worst_norm <= 0 and worst_pi <= 1e-10
    return ok, f"{checked} trees; max ||P^m|| - (1-p)^m = {worst_norm:.2e}, pi residual {worst_pi:.1e}", \
        {"certificate.json": _dumps(reports)}  # the dense check above is test-side and not an artifact


def crit_rho_trend():
    ns = (4, 8, 16, 32)
    rhos = []
    for n in ns:
        W = build_augmented(build_topology("chain", n)).W
        rhos.append(find_effective_gap(W, stationary_pi(W)).rho)
    slope = float(np.polyfit(np.log(ns), np.log(rhos), 1)[0])
    return -1.4 <= slope <= -0.6, f"log-log slope {slope:.2f} (target [-1.4, -0.6]); rho {rhos}", \
        {"rho.json": _dumps({"n": ns, "rho": rhos, "slope": slope})}


def crit_dme_variance():
    res = dme_experiment(build_topology("chain", 8), [2**k for k in range(4, 11)], replicates=100, seed=0)
    return abs(res["slope"] + 1) <= 0.15, f"slope {res['slope']:.3f} (target -1 +- 0.15)", \
        {"dme.json": _dumps(res)}


def crit_robustness():
    base = ExperimentConfig(topology="chain", n=8, zeta2=1.0, r0=10.0, gamma=0.1, rounds=5000)
    eps = 1e-4
    relay_tuned = _tune(replace(base, algo="relay-sgd-robust"), eps)
    d2_tuned = _tune(replace(base, algo="d2"), eps)
    artifacts = {"robust_tune.json": _dumps({"relay": relay_tuned.to_dict(), "d2": d2_tuned.to_dict()})}

    reached = []
    for seed in (0, 1, 2):
        trace = run(replace(base, algo="relay-sgd-robust", gamma=relay_tuned.gamma, drop_prob=0.1, seed=seed))
        artifacts[f"robust_q01_seed{seed}.jsonl"] = trace.to_jsonl().encode()
        reached.append(trace.steps_to(eps))
    d2_trace = run(replace(base, algo="d2", gamma=d2_tuned.gamma, drop_prob=0.1))
    artifacts["d2_q01.jsonl"] = d2_trace.to_jsonl().encode()
    d2_reached = d2_trace.steps_to(eps)

    # without drops, one robust round from any post-warmup state equals one base round
    tree = build_topology("chain", 8)
    p = build_problem(base, 8)
    s = RelayState.init(tree, np.zeros(p.d))
    gap = 0.0
    for t in range(200):
        u = -relay_tuned.gamma * p.gradients(s.x)
        nxt = relay_sgd_round(s, tree, u)
        if t >= tree.diameter:
            dropped = rng.drop_mask(0, t, len(s.counts), 0.0)
            gap = max(gap, float(np.abs(relay_sgd_robust_round(s, tree, u, dropped).x - nxt.x).max()))
        s = nxt

    ok = all(r is not None for r in reached) and gap <= 1e-12 and d2_reached is None
    detail = (f"robust q=0.1 reaches {eps:g} at rounds {reached}; q=0 gap {gap:.1e}; "
              f"d2 q=0.1 final {d2_trace.final_subopt:.2e} ({d2_trace.status})")
    return ok, detail, artifacts


def crit_sgp_consensus():
    x0 = np.random.default_rng(9).normal(size=(8, 5))
    s = GossipState.init(x0)
    for _ in range(3):
        s = sgp_exchange(s, 8)
    err = float(np.abs(s.models - x0.mean(axis=0)).max())
    return err <= 1e-12, f"max deviation from initial mean {err:.1e}", {"sgp.json": _dumps({"err": err})}


def crit_correction_factor():
    a1, _ = correction_factor(build_topology("chain", 1), tol=1e-10)
    a2, _ = correction_factor(build_topology("chain", 2), tol=1e-10)
    a16, c16 = correction_factor(build_topology("chain", 16), tol=1e-10)
    ok = abs(a1 - 1) <= 1e-12 and abs(a2 - 1) <= 1e-12 and 0 < a16 < 1
    return ok, f"a(1)={a1:.12g}, a(2)={a2:.12g}, a(chain 16)={a16:.6f}, correction {c16:.4f}", \
        {"correction.json": _dumps({"a1": a1, "a2": a2, "a16": a16})}


def crit_relay_grad_plateau():
    base = ExperimentConfig(topology="chain", n=16, sigma2=0.0, r0=10.0, gamma=0.1, rounds=3000)
    finals, artifacts = [], {}
    for z in (0.01, 1.0, 100.0):
        trace = run(replace(base, algo="relay-grad", zeta2=z))
        artifacts[f"relay_grad_{z}.jsonl"] = trace.to_jsonl().encode()
        finals.append(trace.final_subopt)
    relay = run(replace(base, zeta2=100.0))
    artifacts["relay_sgd_100.jsonl"] = relay.to_jsonl().encode()
    ok = finals[0] <= finals[1] <= finals[2] and relay.final_subopt <= 1e-10 and finals[2] > relay.final_subopt
    return ok, f"relay-grad finals {[f'{f:.2e}' for f in finals]}; relay-sgd at 100: {relay.final_subopt:.1e}", \
        artifacts


CRITERIA = {
    1: ("oracle equivalence", crit_oracle_equivalence, 10),
    2: ("heterogeneity independence", crit_heterogeneity, 300),
    3: ("topology scaling", crit_topology_scaling, 600),
    4: ("spanning-tree parity", crit_spanning_tree_parity, 600),
    5: ("spectral certification", crit_spectral_certificate, 60),
    6: ("rho trend on chains", crit_rho_trend, 120),
    7: ("mean-estimation variance", crit_dme_variance, 60),
    8: ("robustness to drops", crit_robustness, 120),
    9: ("exponential-graph exact consensus", crit_sgp_consensus, 1),
    10: ("correction factor", crit_correction_factor, 1),
    11: ("relayed-gradient plateau", crit_relay_grad_plateau, 120),
}
EXPECTED_FAIL = {2, 6}


def run_all(threads: int) -> dict:
    """Evaluate criteria 1 to 11 under a fixed BLAS thread count."""
    results = {}
    with threadpool_limits(threads):
        for k, (_, fn, limit) in CRITERIA.items():
            t0 = time.perf_counter()
            ok, detail, artifacts = fn()
            elapsed = time.perf_counter() - t0
            results[k] = {"ok": ok and elapsed < limit, "detail": f"{detail}; {elapsed:.1f}s (limit {limit}s)",
                          "artifacts": artifacts}
    return results


def determinism(first: dict, second: dict) -> tuple[bool, str]:
    """Two independent runs, one per thread count, must agree byte for byte."""
    names = sorted((k, name) for k in first for name in first[k]["artifacts"])
    bad = [f"{k}:{name}" for k, name in names
           if first[k]["artifacts"][name] != second[k]["artifacts"].get(name)]
    detail = f"{len(names)} artifacts identical across runs with 1 and 8 BLAS threads"
    return not bad, detail if not bad else f"artifacts differ: {bad}"


LINES: dict[int, str] = {}


def _line(k: int, ok: bool, detail: str) -> str:
    name = CRITERIA[k][0] if k in CRITERIA else "determinism"
    note = " (known failure)" if not ok and k in EXPECTED_FAIL else ""
    return f"[{'PASS' if ok else 'FAIL'}] criterion {k:2d} {name}{note}: {detail}"


# -- pytest wiring ---------------------------------------------------------------


def _write(results: dict, root: Path) -> None:
    for k, r in results.items():
        for name, data in r["artifacts"].items():
            (root / f"c{k:02d}_{name}").write_bytes(data)


@pytest.fixture(scope="session")
def single_thread(tmp_path_factory):
    results = run_all(1)
    _write(results, tmp_path_factory.mktemp("acceptance_t1"))
    return results


@pytest.fixture(scope="session")
def eight_threads(tmp_path_factory, single_thread):
    results = run_all(8)
    _write(results, tmp_path_factory.mktemp("acceptance_t8"))
    return results


def _check(k: int, results: dict) -> None:
    r = results[k]
    LINES[k] = _line(k, r["ok"], r["detail"])
    assert r["ok"], LINES[k]


def _xfail(reason: str):
    return pytest.mark.xfail(strict=True, reason=reason)


@pytest.mark.acceptance
def test_criterion_01_oracle_equivalence(single_thread):
    _check(1, single_thread)


@pytest.mark.acceptance
@_xfail("per-method tuned steps of the delay-free methods still move by more than 5% across heterogeneity levels")
def test_criterion_02_heterogeneity_independence(single_thread):
    _check(2, single_thread)


@pytest.mark.acceptance
def test_criterion_03_topology_scaling(single_thread):
    _check(3, single_thread)


@pytest.mark.acceptance
def test_criterion_04_spanning_tree_parity(single_thread):
    _check(4, single_thread)


@pytest.mark.acceptance
def test_criterion_05_spectral_certification(single_thread):
    _check(5, single_thread)


@pytest.mark.acceptance
@_xfail("the certified rho of chains shrinks much faster than 1/n")
def test_criterion_06_rho_trend(single_thread):
    _check(6, single_thread)


@pytest.mark.acceptance
def test_criterion_07_dme_variance(single_thread):
    _check(7, single_thread)


@pytest.mark.acceptance
def test_criterion_08_robustness(single_thread):
    _check(8, single_thread)


@pytest.mark.acceptance
def test_criterion_09_sgp_consensus(single_thread):
    _check(9, single_thread)


@pytest.mark.acceptance
def test_criterion_10_correction_factor(single_thread):
    _check(10, single_thread)


@pytest.mark.acceptance
def test_criterion_11_relay_grad_plateau(single_thread):
    _check(11, single_thread)


@pytest.mark.acceptance
def test_criterion_12_determinism(single_thread, eight_threads):
    ok, detail = determinism(single_thread, eight_threads)
    LINES[12] = _line(12, ok, detail)
    assert ok, LINES[12]


if __name__ == "__main__":
    first = run_all(1)
    for k, r in first.items():
        print(_line(k, r["ok"], r["detail"]), flush=True)
    second = run_all(8)
    ok, detail = determinism(first, second)
    print(_line(12, ok, detail))
