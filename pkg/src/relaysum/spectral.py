"""Augmented mixing matrix of relayed averaging and its contraction constants.

Stacking the last ``tau_max + 1`` model snapshots of all ``n`` workers into
``Y`` (row ``n*tau + i`` holds worker ``i`` delayed by ``tau`` rounds) turns
relayed averaging into the linear recursion ``Y <- W Y - gamma W_tilde G``.
``W`` is row stochastic but not symmetric, so consensus contracts only over
blocks of ``m`` rounds; this module finds ``m`` and the associated constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from relaysum.topology import Tree


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class AugmentedMixing:
    n: int
    tau_max: int
    W: np.ndarray
    W_tilde: np.ndarray

    @property
    def size(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class SpectralConstants:
    lambda2_mod: float
    p: float
    m: int
    rho: float
    norm_m: float  # ||(W - 1 pi^T)^m||_2 at the returned m


def build_augmented(tree: Tree) -> AugmentedMixing:
    n, tau_max = tree.n, tree.tau_max
    size = n * (tau_max + 1)
    W = np.zeros((size, size))
    rows = np.repeat(np.arange(n), n)
    cols = (n * tree.delay + np.arange(n)[None, :]).ravel()
    W[rows, cols] = 1.0 / n
    W_tilde = W.copy()
    for tau in range(1, tau_max + 1):
        W[n * tau + np.arange(n), n * (tau - 1) + np.arange(n)] = 1.0
    return AugmentedMixing(n, tau_max, W, W_tilde)


def stationary_pi(W: np.ndarray, tol: float = 1e-10, max_iter: int = 10**6) -> np.ndarray:
    """Left Perron vector of a row-stochastic ``W`` by power iteration, normalized to sum 1."""
    Wt = sp.csr_matrix(W.T)
    pi = np.full(W.shape[0], 1.0 / W.shape[0])
    residual = np.inf
    for it in range(max_iter):
        nxt = Wt @ pi
        nxt /= nxt.sum()
        if it % 16 == 0:
            residual = np.abs(Wt @ nxt - nxt).max()
            if residual <= tol * 1e-2:
                return nxt
        pi = nxt
    residual = np.abs(Wt @ pi - pi).max()
    if residual <= tol:
        return pi
    raise ConvergenceError(f"stationary vector did not converge: residual {residual:.3e}")


def _deflated(W: sp.csr_matrix, pi: np.ndarray):
    ones = np.ones(W.shape[0])

    def apply(X):
        return W @ X - np.outer(ones, pi @ X)

    return apply


def second_eigenvalue_modulus(W: np.ndarray, pi: np.ndarray, block: int = 4, tol: float = 1e-12,
                              max_iter: int = 10**6, seed: int = 0) -> float:
    """``|lambda_2(W)|`` as the spectral radius of ``W - 1 pi^T``.

    Block power iteration with Rayleigh-Ritz extraction; a block of at least
    two vectors captures complex-conjugate pairs.
    """
    size = W.shape[0]
    if size == 1:
        return 0.0
    k = min(block, size)
    apply = _deflated(sp.csr_matrix(W), pi)
    Q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((size, k)))
    prev = np.inf
    for it in range(max_iter):
        Z = apply(Q)
        if not np.any(Z):
            return 0.0
        if it % 10 == 9:
            est = float(np.abs(np.linalg.eigvals(Q.T @ Z)).max())
            if abs(est - prev) <= tol * max(est, 1e-300):
                return est
            prev = est
        Q, _ = np.linalg.qr(Z)
    raise ConvergenceError(f"|lambda_2| did not stagnate after {max_iter} iterations (last {prev})")


def _power_norm(P: np.ndarray, v: np.ndarray, iters: int, rtol: float = 0.0) -> tuple[float, np.ndarray]:
    # lower estimate of ||P||_2 by power iteration on P^T P
    est = 0.0
    for _ in range(iters):
        w = P @ v
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0, v
        v = P.T @ w
        v /= np.linalg.norm(v)
        if rtol and abs(new - est) <= rtol * new:
            return new, v
        est = new
    return est, v


def find_effective_gap(W: np.ndarray, pi: np.ndarray, m_cap: int | None = None,
                       seed: int = 0) -> SpectralConstants:
    """Smallest ``m`` with ``||(W - 1 pi^T)^m||_2 <= (1 - p)^m`` for ``p = (1 - |lambda_2|) / 2``.

    Candidates are screened by power iteration (a lower bound on the norm);
    the accepted ``m`` is confirmed with an exact SVD-based norm.
    """
    size = W.shape[0]
    if m_cap is None:
        m_cap = 10 * size
    lam2 = second_eigenvalue_modulus(W, pi, seed=seed)
    p = 0.5 * (1.0 - lam2)
    Ws = sp.csr_matrix(W)
    P = W - np.outer(np.ones(size), pi)
    v = np.random.default_rng(seed).standard_normal(size)
    v /= np.linalg.norm(v)
    best = (0, np.inf)
    for m in range(1, m_cap + 1):
        target = (1.0 - p) ** m
        est, v = _power_norm(P, v, 20)
        if est <= target:
            est, v = _power_norm(P, v, 5000, rtol=1e-13)
            if est <= target:
                exact = float(np.linalg.norm(P, 2))
                if exact <= target:
                    return SpectralConstants(lam2, p, m, p / m, exact)
        if est / target < best[1]:
            best = (m, est / target)
        P = Ws @ P
    raise ConvergenceError(
        f"no certified m <= {m_cap}; closest was m={best[0]} with norm/(1-p)^m = {best[1]:.4f}"
    )


def analysis_constants(W: np.ndarray, pi: np.ndarray, m: int, n: int) -> tuple[float, float]:
    """``(C1^2, C^2)`` with ``C1^2 = max_{i<m} ||W^i I_n||^2`` and ``C^2 = C1^2 / ||1 pi^T I_n||^2``."""
    size = W.shape[0]
    tau_max = size // n - 1
    Ws = sp.csr_matrix(W)
    block = np.eye(size)[:, :n]
    c1_sq = 0.0
    for _ in range(m):
        c1_sq = max(c1_sq, float(np.linalg.norm(block, 2)) ** 2)
        block = Ws @ block
    pi0 = float(pi[:n].mean())
    closed = n * n * (tau_max + 1) * pi0**2
    direct = float(np.linalg.norm(np.outer(np.ones(size), np.r_[pi[:n], np.zeros(size - n)]), 2)) ** 2
    if abs(closed - direct) > 1e-9 * max(direct, 1.0):
        raise ArithmeticError(f"||1 pi^T I||^2 mismatch: closed form {closed}, direct {direct}")
    return c1_sq, c1_sq / closed


def spectral_report(tree: Tree, seed: int = 0) -> dict:
    aug = build_augmented(tree)
    pi = stationary_pi(aug.W)
    gap = find_effective_gap(aug.W, pi, seed=seed)
    c1_sq, c_sq = analysis_constants(aug.W, pi, gap.m, tree.n)
    return {
        "n": tree.n,
        "tau_max": aug.tau_max,
        "lambda2": gap.lambda2_mod,
        "p": gap.p,
        "m": gap.m,
        "rho": gap.rho,
        "C1_sq": c1_sq,
        "C_sq": c_sq,
    }
