"""Random heterogeneous least-squares problems with controlled constants.

Worker ``i`` holds ``f_i(x) = ||A_i x + b_i||^2``. The singular values of each
``A_i`` are a linear grid on ``[mu, L]``, the offsets ``b_i`` are shifted so
that the mean squared local gradient at the global optimum equals ``zeta2``,
and the optimum sits at distance ``r0`` from the all-zero starting point.

Note that the Hessian of ``f_i`` is ``2 A_i^T A_i``, whose eigenvalues lie in
``[2 mu^2, 2 L^2]``; :meth:`QuadraticProblem.hessian_spectrum` reports them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from relaysum import rng


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Additive isotropic Gaussian gradient noise with ``E||noise||^2 = sigma2``."""

    sigma2: float = 0.0

    def sample(self, seed: int, step: int, n: int, d: int) -> np.ndarray:
        return rng.gradient_noise(seed, step, n, d, self.sigma2)


@dataclass(frozen=True, eq=False)
class QuadraticProblem:
    A: np.ndarray
    b: np.ndarray
    x_star: np.ndarray
    L: float = 1.0
    mu: float = 1.0
    zeta2: float = 0.0
    sigma2: float = 0.0
    r0: float = 0.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[2]

    @cached_property
    def hessians(self) -> np.ndarray:
        return 2.0 * np.einsum("kji,kjl->kil", self.A, self.A)

    @cached_property
    def _offsets(self) -> np.ndarray:
        return 2.0 * np.einsum("kji,kj->ki", self.A, self.b)

    @cached_property
    def mean_hessian(self) -> np.ndarray:
        return self.hessians.mean(axis=0)

    def local_losses(self, x: np.ndarray) -> np.ndarray:
        """``f_i(x)`` for every worker at a shared point ``x`` of shape ``(d,)``."""
        r = np.einsum("kij,j->ki", self.A, x) + self.b
        return np.einsum("ki,ki->k", r, r)

    def loss(self, x: np.ndarray) -> float:
        return float(self.local_losses(x).mean())

    def gradients(self, X: np.ndarray, noise: np.ndarray | None = None) -> np.ndarray:
        """Local gradients ``grad f_i(X[i])`` for a stacked ``(n, d)`` array of models."""
        if X.shape != (self.n, self.d):
            raise ValueError(f"expected models of shape {(self.n, self.d)}, got {X.shape}")
        g = np.matmul(self.hessians, X[:, :, None])[:, :, 0] + self._offsets
        if noise is not None:
            g = g + noise
        return g

    def gradient(self, worker: int, x: np.ndarray, noise: NoiseSpec | None = None,
                 seed: int = 0, step: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"expected a vector of dimension {self.d}, got shape {x.shape}")
        g = self.hessians[worker] @ x + self._offsets[worker]
        if noise is not None and noise.sigma2 > 0:
            g = g + noise.sample(seed, step, self.n, self.d)[worker]
        return g

    def heterogeneity(self) -> float:
        """Mean squared norm of the local gradients at the global optimum."""
        g = np.einsum("kij,j->ki", self.hessians, self.x_star) + self._offsets
        return float(np.mean(np.einsum("ki,ki->k", g, g)))

    def suboptimality(self, x_bar: np.ndarray) -> float:
        """``f(x_bar) - f(x_star)``, evaluated as the exact quadratic form."""
        e = np.asarray(x_bar, dtype=float) - self.x_star
        return float(0.5 * e @ self.mean_hessian @ e)

    def worker_suboptimality(self, X: np.ndarray) -> np.ndarray:
        E = X - self.x_star
        return 0.5 * ((E @ self.mean_hessian) * E).sum(axis=1)

    def hessian_spectrum(self) -> tuple[float, float]:
        """Smallest and largest eigenvalue over all local Hessians."""
        ev = np.linalg.eigvalsh(self.hessians)
        return float(ev.min()), float(ev.max())

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "x_star": self.x_star.tolist(),
            "L": self.L,
            "mu": self.mu,
            "zeta2": self.zeta2,
            "sigma2": self.sigma2,
            "r0": self.r0,
            "seed": self.seed,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuadraticProblem":
        return cls(
            A=np.array(data["A"], dtype=float),
            b=np.array(data["b"], dtype=float),
            x_star=np.array(data["x_star"], dtype=float),
            L=data["L"], mu=data["mu"], zeta2=data["zeta2"], sigma2=data["sigma2"],
            r0=data["r0"], seed=data["seed"], meta=data.get("meta", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "QuadraticProblem":
        return cls.from_dict(json.loads(text))


def _center(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    # shift offsets so that the global optimum of sum_i ||A_i x + b_i||^2 is zero
    H = np.einsum("kji,kjl->il", A, A)
    r = np.einsum("kji,kj->i", A, b)
    x_opt = -np.linalg.solve(H, r)
    return b + np.einsum("kij,j->ki", A, x_opt)


def _zeta2(A: np.ndarray, b: np.ndarray) -> float:
    g = 2.0 * np.einsum("kji,kj->ki", A, b)
    return float(np.mean(np.einsum("ki,ki->k", g, g)))


def generate_quadratics(n: int, d: int, L: float = 1.0, mu: float = 0.5, zeta2: float = 0.0,
                        r0: float = 1.0, seed: int = 0, sigma2: float = 0.0,
                        rtol: float = 1e-6, max_iter: int = 200) -> QuadraticProblem:
    """Generate a random heterogeneous quadratic problem.

    1. Draw ``A_i`` with i.i.d. standard normal entries.
    2. Replace the singular values of ``A_i`` by ``linspace(mu, L, d)``.
    3. Set ``b_i = A_i s d_i`` for random directions ``d_i``, re-centre so the
       global optimum stays at the origin, and bisect on ``s`` until the
       heterogeneity matches ``zeta2``.
    4. Move the optimum to a random point of norm ``r0``.
    """
    if not 0 < mu <= L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    if d < 2:
        raise ValueError(f"need d >= 2, got {d}")
    if zeta2 < 0 or r0 < 0 or sigma2 < 0:
        raise ValueError("zeta2, r0 and sigma2 must be nonnegative")
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")

    gen = rng.stream(seed, rng.INIT)
    A = gen.standard_normal((n, d, d))
    U, _, Vt = np.linalg.svd(A)
    grid = np.linspace(L, mu, d)  # svd orders singular values descending
    A = np.einsum("kij,j,kjl->kil", U, grid, Vt)

    directions = gen.standard_normal((n, d))

    def offsets(s: float) -> np.ndarray:
        return _center(A, s * np.einsum("kij,kj->ki", A, directions))

    if zeta2 == 0 or n == 1:
        b = np.zeros((n, d))
    else:
        lo, hi = 0.0, 1.0
        while _zeta2(A, offsets(hi)) < zeta2:
            lo, hi = hi, 2.0 * hi
            if hi > 2.0**64:
                raise GenerationError(
                    f"cannot bracket zeta2={zeta2}: reached {_zeta2(A, offsets(hi))} at s={hi}"
                )
        s = hi
        for _ in range(max_iter):
            s = 0.5 * (lo + hi)
            achieved = _zeta2(A, offsets(s))
            if abs(achieved - zeta2) <= rtol * zeta2:
                break
            if achieved < zeta2:
                lo = s
            else:
                hi = s
        else:
            raise GenerationError(f"bisection did not reach zeta2={zeta2}: achieved {achieved}")
        b = offsets(s)

    x_star = gen.standard_normal(d)
    x_star = x_star * (r0 / np.linalg.norm(x_star)) if r0 > 0 else np.zeros(d)
    b = b - np.einsum("kij,j->ki", A, x_star)

    prob = QuadraticProblem(A=A, b=b, x_star=x_star, L=L, mu=mu, zeta2=zeta2,
                            sigma2=sigma2, r0=r0, seed=seed)
    prob.meta["zeta2_achieved"] = prob.heterogeneity()
    return prob
