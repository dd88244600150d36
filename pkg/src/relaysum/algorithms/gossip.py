"""Gossip-based baselines: D-PSGD, D2, gradient tracking, SGP and all-reduce.

Every round function takes the full per-worker gradient array ``(n, d)`` and
returns a fresh :class:`GossipState`. Momentum, when enabled through
``alpha``, is the Nesterov-style local momentum of :func:`local_momentum_update`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from relaysum.topology import exponential_offset

GT_VARIANTS = ("tracking", "j-indexed", "i-indexed")


class EigenvalueConditionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GossipState:
    x: np.ndarray
    c: np.ndarray
    mom: np.ndarray
    w: np.ndarray
    round: int = 0
    exchange: int = 0  # SGP exchange counter t'

    @classmethod
    def init(cls, x0: np.ndarray, n: int | None = None) -> "GossipState":
        x0 = np.asarray(x0, dtype=float)
        x = np.tile(x0, (n, 1)) if x0.ndim == 1 else x0.copy()
        return cls(x=x, c=np.zeros_like(x), mom=np.zeros_like(x), w=np.ones(x.shape[0]))

    @property
    def models(self) -> np.ndarray:
        """De-biased models ``x / w`` (identical to ``x`` outside push-sum)."""
        return self.x / self.w[:, None]


def local_momentum_update(mom: np.ndarray, gradient: np.ndarray, alpha: float,
                          gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(mom', u)`` with ``mom' = alpha*mom + g`` and ``u = -gamma*(g + alpha*mom')``."""
    if not 0 <= alpha < 1:
        raise ValueError(f"momentum must lie in [0, 1), got {alpha}")
    new = alpha * mom + gradient
    return new, -gamma * (gradient + alpha * new)


def _check(state: GossipState, gradients: np.ndarray, W: np.ndarray | None = None) -> np.ndarray:
    gradients = np.asarray(gradients, dtype=float)
    if gradients.shape != state.x.shape:
        raise ValueError(f"gradients have shape {gradients.shape}, models have {state.x.shape}")
    if W is not None and W.shape != (state.x.shape[0],) * 2:
        raise ValueError(f"gossip matrix has shape {W.shape}, expected {(state.x.shape[0],) * 2}")
    return gradients


def drop_gossip_matrix(W: np.ndarray, dropped: np.ndarray) -> np.ndarray:
    """Remove lost messages from a gossip matrix.

    ``dropped`` is a boolean ``(n, n)`` array where ``dropped[i, j]`` means the
    message from ``j`` to ``i`` was lost. Its weight falls back onto the
    receiver's own model, so rows still sum to one.
    """
    lost = np.where(dropped & ~np.eye(W.shape[0], dtype=bool), W, 0.0)
    out = W - lost
    out[np.diag_indices_from(out)] += lost.sum(axis=1)
    return out


def dpsgd_round(state: GossipState, W: np.ndarray, gradients: np.ndarray, gamma: float,
                alpha: float = 0.0) -> GossipState:
    gradients = _check(state, gradients, W)
    mom, u = local_momentum_update(state.mom, gradients, alpha, gamma)
    return replace(state, x=W @ (state.x + u), mom=mom, round=state.round + 1)


def min_eigenvalue(W: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (W + W.T)).min())


def check_d2_matrix(W: np.ndarray) -> float:
    lam = min_eigenvalue(W)
    if lam < -1.0 / 3.0 - 1e-12:
        raise EigenvalueConditionError(
            f"D2 needs lambda_min(W) >= -1/3 but lambda_min = {lam:.6f}; pass (W + I)/2 instead"
        )
    return lam


def d2_round(state: GossipState, W: np.ndarray, gradients: np.ndarray, gamma: float,
             alpha: float = 0.0, check: bool = True) -> GossipState:
    """Exact-diffusion style round.

    ``check=False`` skips the eigenvalue test; callers that loop over rounds
    should validate ``W`` once with :func:`check_d2_matrix`.
    """
    gradients = _check(state, gradients, W)
    if check:
        check_d2_matrix(W)
    mom, u = local_momentum_update(state.mom, gradients, alpha, gamma)
    x = W @ (state.x + u + state.c)
    return replace(state, x=x, c=x - state.x - u, mom=mom, round=state.round + 1)


def gradient_tracking_round(state: GossipState, W: np.ndarray, gradients: np.ndarray, gamma: float,
                            alpha: float = 0.0, variant: str = "tracking") -> GossipState:
    """Gradient tracking with the correction folded into the model step.

    ``variant="tracking"`` (default) updates ``c <- W(c + u) - u`` so that
    ``u + c`` tracks the network-average step. The two other variants are
    literal transcriptions of a correction ``c <- W(c - u)`` and
    ``c <- c - u``; both let the average correction drift with every step and
    are unstable even on homogeneous problems. They are kept for comparison.
    """
    gradients = _check(state, gradients, W)
    mom, u = local_momentum_update(state.mom, gradients, alpha, gamma)
    x = W @ (state.x + u + state.c)
    if variant == "tracking":
        c = W @ (state.c + u) - u
    elif variant == "j-indexed":
        c = W @ (state.c - u)
    elif variant == "i-indexed":
        c = state.c - u
    else:
        raise ValueError(f"unknown gradient-tracking variant {variant!r}; expected one of {GT_VARIANTS}")
    return replace(state, x=x, c=c, mom=mom, round=state.round + 1)


def sgp_round(state: GossipState, n: int, gradients: np.ndarray, gamma: float,
              alpha: float = 0.0) -> GossipState:
    """Stochastic gradient push on the time-varying exponential graph.

    A local step, then two push-sum exchanges. In each exchange worker ``i``
    keeps half of its mass and pushes the other half to ``i - o``, so it
    receives from ``i + o``. Every worker sends and receives exactly once per
    exchange, so the push-sum weights stay at 1 and ``models`` equals ``x``.
    """
    gradients = _check(state, gradients)
    if state.x.shape[0] != n:
        raise ValueError(f"state has {state.x.shape[0]} workers, expected {n}")
    exponential_offset(n, 0)  # validates the power-of-two requirement
    mom, u = local_momentum_update(state.mom, gradients, alpha, gamma)
    x = state.x + u
    w = state.w
    t = state.exchange
    for _ in range(2):
        o = exponential_offset(n, t)
        if o:
            x = 0.5 * (x + np.roll(x, -o, axis=0))
            w = 0.5 * (w + np.roll(w, -o))
        t += 1
    return replace(state, x=x, w=w, mom=mom, round=state.round + 1, exchange=t)


def sgp_exchange(state: GossipState, n: int) -> GossipState:
    """A single push-sum exchange without any local step."""
    o = exponential_offset(n, state.exchange)
    x, w = state.x, state.w
    if o:
        x = 0.5 * (x + np.roll(x, -o, axis=0))
        w = 0.5 * (w + np.roll(w, -o))
    return replace(state, x=x, w=w, exchange=state.exchange + 1)


def all_reduce_round(state: GossipState, gradients: np.ndarray, gamma: float,
                     alpha: float = 0.0) -> GossipState:
    gradients = _check(state, gradients)
    mom, u = local_momentum_update(state.mom, gradients, alpha, gamma)
    mean = (state.x + u).mean(axis=0)
    return replace(state, x=np.tile(mean, (state.x.shape[0], 1)), mom=mom, round=state.round + 1)
