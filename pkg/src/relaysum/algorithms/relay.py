"""Relayed-sum rounds on spanning trees.

Each worker keeps the message it received from every neighbour in the
previous round. In round ``t`` it sends neighbour ``j`` its own parcel plus the
sum of what the *other* neighbours sent it in round ``t - 1``, together with a
count of how many workers' parcels that message contains. Parcels from a
worker ``h`` hops away therefore arrive ``h - 1`` rounds late, undamped.

All round functions are pure: they return a new state and never mutate their
inputs. Messages live in arrays indexed by ``Tree.directed_edges``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from relaysum.topology import DoubleBinaryTrees, Graph, Tree

WARMUP_MODES = ("count", "clamp")


class NoEstimateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RelayPlan:
    """Index structures for message passing on one tree."""

    n: int
    src: np.ndarray
    dst: np.ndarray
    relay: np.ndarray  # relay[e, f] = 1 if message f is forwarded into message e
    inbound: np.ndarray  # inbound[i, e] = 1 if message e is delivered to worker i


@lru_cache(maxsize=256)
def relay_plan(tree: Tree) -> RelayPlan:
    edges = tree.directed_edges
    src = np.array([u for u, _ in edges], dtype=int)
    dst = np.array([v for _, v in edges], dtype=int)
    k = len(edges)
    relay = np.zeros((k, k))
    for e, (i, j) in enumerate(edges):
        for f, (a, b) in enumerate(edges):
            if b == i and a != j:
                relay[e, f] = 1.0
    inbound = np.zeros((tree.n, k))
    inbound[dst, np.arange(k)] = 1.0
    return RelayPlan(tree.n, src, dst, relay, inbound)


def _require_tree(tree: Graph) -> Tree:
    if isinstance(tree, Tree):
        return tree
    if tree.is_tree:
        return Tree.from_graph(tree)
    raise ValueError("relay rounds need a tree topology; build a spanning tree first")


@dataclass(frozen=True, eq=False)
class RelayState:
    """Models plus the messages delivered in the previous round.

    ``x_start`` is the common initial model, used only by the ``clamp``
    warm-up mode.
    """

    x: np.ndarray
    msgs: np.ndarray
    counts: np.ndarray
    n_bar: np.ndarray
    round: int = 0
    x_start: np.ndarray | None = None

    @classmethod
    def init(cls, tree: Graph, x0: np.ndarray) -> "RelayState":
        tree = _require_tree(tree)
        x0 = np.asarray(x0, dtype=float)
        common = x0.ndim == 1
        x = np.tile(x0, (tree.n, 1)) if common else x0.copy()
        k = len(tree.directed_edges)
        return cls(
            x=x,
            msgs=np.zeros((k, x.shape[1])),
            counts=np.zeros(k, dtype=np.int64),
            n_bar=np.ones(tree.n, dtype=np.int64),
            round=0,
            x_start=x0.copy() if common else None,
        )


def _check_updates(state, updates: np.ndarray) -> np.ndarray:
    updates = np.asarray(updates, dtype=float)
    if updates.shape != state.x.shape:
        raise ValueError(f"updates have shape {updates.shape}, models have {state.x.shape}")
    return updates


def relay_sgd_round(state: RelayState, tree: Graph, updates: np.ndarray,
                    warmup: str = "count") -> RelayState:
    """One synchronous round of relayed model averaging.

    ``warmup="count"`` divides by the number of parcels received so far.
    ``warmup="clamp"`` always divides by ``n`` and stands in the common start
    model for parcels that have not arrived yet, which is the stacked linear
    recursion of :mod:`relaysum.spectral` with pre-start rows held at ``x0``.
    The two coincide once every worker has heard from every other.
    """
    tree = _require_tree(tree)
    updates = _check_updates(state, updates)
    plan = relay_plan(tree)
    half = state.x + updates
    msgs = half[plan.src] + plan.relay @ state.msgs
    counts = 1 + (plan.relay @ state.counts).astype(np.int64)
    n_bar = 1 + (plan.inbound @ counts).astype(np.int64)
    total = half + plan.inbound @ msgs
    if warmup == "count":
        x = total / n_bar[:, None]
    elif warmup == "clamp":
        if state.x_start is None:
            raise ValueError("clamp warm-up needs a common initial model")
        missing = (tree.n - n_bar)[:, None] * state.x_start[None, :]
        x = (total + missing) / tree.n
    else:
        raise ValueError(f"unknown warm-up mode {warmup!r}; expected one of {WARMUP_MODES}")
    return replace(state, x=x, msgs=msgs, counts=counts, n_bar=n_bar, round=state.round + 1)


def relay_sgd_robust_round(state: RelayState, tree: Graph, updates: np.ndarray,
                           dropped: np.ndarray | None = None, n_known: int | None = None) -> RelayState:
    """Relayed averaging that tolerates lost messages.

    A lost message contributes neither to the model sum nor to the count, and
    the receiver relays nothing on its behalf next round. Missing parcels are
    replaced by the worker's own current model.
    """
    tree = _require_tree(tree)
    updates = _check_updates(state, updates)
    plan = relay_plan(tree)
    n = tree.n if n_known is None else n_known
    half = state.x + updates
    msgs = half[plan.src] + plan.relay @ state.msgs
    counts = 1 + (plan.relay @ state.counts).astype(np.int64)
    if dropped is not None and dropped.any():
        keep = ~np.asarray(dropped, dtype=bool)
        msgs = msgs * keep[:, None]
        counts = counts * keep
    n_bar = 1 + (plan.inbound @ counts).astype(np.int64)
    x = (half + plan.inbound @ msgs + (n - n_bar)[:, None] * state.x) / n
    return replace(state, x=x, msgs=msgs, counts=counts, n_bar=n_bar, round=state.round + 1)


def relay_grad_round(state: RelayState, tree: Graph, gradients: np.ndarray, gamma: float) -> RelayState:
    """Relay the *updates* instead of the models; every update lands with weight exactly 1/n."""
    tree = _require_tree(tree)
    gradients = _check_updates(state, gradients)
    plan = relay_plan(tree)
    u = -gamma * gradients
    msgs = u[plan.src] + plan.relay @ state.msgs
    counts = 1 + (plan.relay @ state.counts).astype(np.int64)
    n_bar = 1 + (plan.inbound @ counts).astype(np.int64)
    x = state.x + (u + plan.inbound @ msgs) / tree.n
    return replace(state, x=x, msgs=msgs, counts=counts, n_bar=n_bar, round=state.round + 1)


# -- distributed mean estimation ------------------------------------------------


@dataclass(frozen=True, eq=False)
class DmeState:
    y: np.ndarray
    s: np.ndarray
    msgs: np.ndarray
    counts: np.ndarray
    round: int = 0

    @classmethod
    def init(cls, tree: Graph, d: int) -> "DmeState":
        tree = _require_tree(tree)
        k = len(tree.directed_edges)
        return cls(np.zeros((tree.n, d)), np.zeros(tree.n, dtype=np.int64),
                   np.zeros((k, d)), np.zeros(k, dtype=np.int64))

    def estimate(self) -> np.ndarray:
        if (self.s == 0).any():
            raise NoEstimateError("no estimate yet: some workers have not received any sample")
        return self.y / self.s[:, None]


def relay_dme_round(state: DmeState, tree: Graph, samples: np.ndarray) -> DmeState:
    """Accumulate one round of samples; the estimate is the mean of every sample received so far."""
    tree = _require_tree(tree)
    samples = np.asarray(samples, dtype=float)
    if samples.shape != state.y.shape:
        raise ValueError(f"samples have shape {samples.shape}, expected {state.y.shape}")
    plan = relay_plan(tree)
    msgs = samples[plan.src] + plan.relay @ state.msgs
    counts = 1 + (plan.relay @ state.counts).astype(np.int64)
    y = state.y + samples + plan.inbound @ msgs
    s = state.s + 1 + (plan.inbound @ counts).astype(np.int64)
    return DmeState(y, s, msgs, counts, state.round + 1)


# -- double binary trees ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DoubleTreeState:
    """Two independent relay states; odd coordinates on tree A, even on tree B."""

    a: RelayState
    b: RelayState
    odd: np.ndarray
    even: np.ndarray

    @classmethod
    def init(cls, trees: DoubleBinaryTrees, x0: np.ndarray) -> "DoubleTreeState":
        x0 = np.asarray(x0, dtype=float)
        odd, even = DoubleBinaryTrees.coordinate_split(x0.shape[-1])
        return cls(RelayState.init(trees.tree_a, x0[..., odd]),
                   RelayState.init(trees.tree_b, x0[..., even]), odd, even)

    @property
    def x(self) -> np.ndarray:
        out = np.empty((self.a.x.shape[0], len(self.odd) + len(self.even)))
        out[:, self.odd] = self.a.x
        out[:, self.even] = self.b.x
        return out

    @property
    def round(self) -> int:
        return self.a.round


def double_tree_round(state: DoubleTreeState, trees: DoubleBinaryTrees, updates: np.ndarray,
                      warmup: str = "count") -> DoubleTreeState:
    return replace(
        state,
        a=relay_sgd_round(state.a, trees.tree_a, updates[:, state.odd], warmup),
        b=relay_sgd_round(state.b, trees.tree_b, updates[:, state.even], warmup),
    )


# -- learning-rate correction --------------------------------------------------------


def correction_factor(tree: Graph, tol: float = 1e-10, max_rounds: int = 10_000) -> tuple[float, float]:
    """Fraction ``a`` of a unit update that survives relayed averaging, and ``1 / a``.

    Every worker starts from a scalar 0, applies a single update of 1 in round
    0 and then only relays. Parcels that have not arrived yet count as the
    start value 0, so early rounds leak energy and the workers settle at a
    common value ``a <= 1``.
    """
    tree = _require_tree(tree)
    state = RelayState.init(tree, np.zeros(1))
    zero = np.zeros((tree.n, 1))
    state = relay_sgd_round(state, tree, np.ones((tree.n, 1)), warmup="clamp")
    spread = np.inf
    for _ in range(max_rounds):
        nxt = relay_sgd_round(state, tree, zero, warmup="clamp")
        spread = float(np.ptp(nxt.x))
        change = float(np.abs(nxt.x - state.x).max())
        state = nxt
        if spread < tol and change < tol:
            a = float(state.x.mean())
            return a, 1.0 / a
    raise RuntimeError(f"correction protocol did not converge in {max_rounds} rounds; spread {spread:.3e}")
