import numpy as np
import pytest

from relaysum.algorithms import RelayState, relay_sgd_round
from relaysum.spectral import (
    analysis_constants,
    build_augmented,
    find_effective_gap,
    second_eigenvalue_modulus,
    spectral_report,
    stationary_pi,
)
from relaysum.topology import Tree, build_topology

TREES = [(k, n) for k in ("chain", "star", "balanced-binary-tree") for n in (2, 3, 4, 5, 8)]


def dense_pi(W):
    vals, vecs = np.linalg.eig(W.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    return v / v.sum()


@pytest.mark.parametrize("kind, n", TREES)
def test_augmented_structure(kind, n):
    t = build_topology(kind, n)
    aug = build_augmented(t)
    W = aug.W
    assert W.shape == (n * (t.tau_max + 1),) * 2
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
    for i in range(n):
        for j in range(n):
            assert W[i, n * t.delay[i, j] + j] == pytest.approx(1 / n)
    for tau in range(1, t.tau_max + 1):
        for i in range(n):
            row = W[n * tau + i]
            assert row[n * (tau - 1) + i] == 1.0 and row.sum() == 1.0
            assert (aug.W_tilde[n * tau + i] == 0).all()
    np.testing.assert_array_equal(aug.W_tilde[:n], W[:n])


@pytest.mark.parametrize("kind, n", TREES)
def test_stationary_vector_matches_dense_eig(kind, n):
    W = build_augmented(build_topology(kind, n)).W
    pi = stationary_pi(W)
    np.testing.assert_allclose(pi @ W, pi, atol=1e-10)
    assert pi.sum() == pytest.approx(1.0)
    assert (pi >= 0).all()
    assert np.ptp(pi[:n]) <= 1e-10 and pi[0] > 0
    np.testing.assert_allclose(pi, dense_pi(W), atol=1e-9)


@pytest.mark.parametrize("kind, n", TREES)
def test_lambda2_matches_dense_eig(kind, n):
    W = build_augmented(build_topology(kind, n)).W
    pi = stationary_pi(W)
    mods = np.sort(np.abs(np.linalg.eigvals(W)))[::-1]
    assert second_eigenvalue_modulus(W, pi) == pytest.approx(mods[1] if len(mods) > 1 else 0.0, abs=1e-8)


@pytest.mark.parametrize("kind, n", TREES)
def test_m_is_certified_and_minimal(kind, n):
    W = build_augmented(build_topology(kind, n)).W
    pi = stationary_pi(W)
    gap = find_effective_gap(W, pi)
    P = W - np.outer(np.ones(len(pi)), pi)
    norms = [np.linalg.norm(np.linalg.matrix_power(P, k), 2) for k in range(1, gap.m + 1)]
    assert norms[-1] <= (1 - gap.p) ** gap.m
    for k, nk in enumerate(norms[:-1], start=1):
        assert nk > (1 - gap.p) ** k
    assert 0 < gap.p <= 0.5 and 0 < gap.rho <= 0.5


def test_frozen_values():
    # values computed once with the dense-matrix oracle above and frozen here
    assert find_effective_gap(*_w_pi("chain", 2)).rho == pytest.approx(0.5)
    assert find_effective_gap(*_w_pi("chain", 4)).m == 3
    assert find_effective_gap(*_w_pi("chain", 8)).m == 10
    for n in (3, 5, 9, 16):
        assert find_effective_gap(*_w_pi("star", n)).m == 2
    W, pi = _w_pi("chain", 3)
    c1_sq, _ = analysis_constants(W, pi, find_effective_gap(W, pi).m, 3)
    assert c1_sq == pytest.approx(1.6476, abs=1e-4)


def _w_pi(kind, n):
    W = build_augmented(build_topology(kind, n)).W
    return W, stationary_pi(W)


def test_analysis_constants_against_direct_norms():
    W, pi = _w_pi("balanced-binary-tree", 6)
    m = find_effective_gap(W, pi).m
    n, size = 6, W.shape[0]
    I_n = np.eye(size)[:, :n]
    direct = max(np.linalg.norm(np.linalg.matrix_power(W, i) @ I_n, 2) ** 2 for i in range(m))
    c1_sq, c_sq = analysis_constants(W, pi, m, n)
    assert c1_sq == pytest.approx(direct, rel=1e-12)
    denom = np.linalg.norm(np.outer(np.ones(size), pi) @ I_n, 2) ** 2
    assert c_sq == pytest.approx(direct / denom, rel=1e-9)


def test_report_keys():
    rep = spectral_report(build_topology("chain", 8), seed=1)
    assert {"lambda2", "p", "m", "rho", "C1_sq", "C_sq"} <= rep.keys()


def test_single_worker():
    W, pi = _w_pi("chain", 1)
    gap = find_effective_gap(W, pi)
    assert gap.lambda2_mod == 0.0 and gap.m == 1


@pytest.mark.parametrize("kind, n", [("chain", 6), ("star", 7), ("balanced-binary-tree", 9)])
def test_consensus_contracts_at_certified_rate(kind, n):
    """With zero updates, the stacked history obeys Y <- W Y once every buffer is full."""
    t: Tree = build_topology(kind, n)
    aug = build_augmented(t)
    W, pi = aug.W, stationary_pi(aug.W)
    gap = find_effective_gap(W, pi)
    rng = np.random.default_rng(0)
    state = RelayState.init(t, rng.normal(size=(n, 3)))
    history = [state.x]
    zero = np.zeros((n, 3))
    for _ in range(t.tau_max + 1 + 4 * gap.m):
        state = relay_sgd_round(state, t, zero)
        history.append(state.x)

    def stacked(k):
        return np.vstack([history[k - tau] for tau in range(t.tau_max + 1)])

    t0 = t.tau_max + 1
    for k in range(t0, len(history) - 1):
        np.testing.assert_allclose(stacked(k + 1), W @ stacked(k), atol=1e-12)

    def spread(Y):
        return np.linalg.norm(Y - np.outer(np.ones(len(pi)), pi @ Y))

    for blocks in range(1, 5):
        ratio = spread(stacked(t0 + blocks * gap.m)) / spread(stacked(t0))
        assert ratio <= (1 - gap.p) ** (blocks * gap.m) + 1e-12
