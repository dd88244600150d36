"""Communication graphs, spanning trees, relay delays and gossip schedules.

Workers are labelled ``0..n-1``. Every graph is undirected, simple and
unweighted. A :class:`Tree` additionally carries the hop-distance matrix and
the *realized* relay delay matrix: a message leaving worker ``j`` during
round ``t`` is folded into worker ``i``'s model at the end of round
``t + delay[i, j]`` where ``delay = max(hop - 1, 0)``. Direct neighbours
therefore see each other's half-step models within the same round.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

TOPOLOGY_KINDS = ("chain", "ring", "star", "balanced-binary-tree")


class GraphFormatError(ValueError):
    """Raised when an edge list cannot be parsed."""


class DisconnectedGraphError(ValueError):
    """Raised when an operation needs a connected graph."""


def _normalize_edges(n: int, edges) -> tuple[tuple[int, int], ...]:
    out = set()
    for u, v in edges:
        u, v = int(u), int(v)
        if u == v:
            raise ValueError(f"self-loop on node {u}")
        if min(u, v) < 0 or max(u, v) >= n:
            raise ValueError(f"edge ({u}, {v}) out of range for n={n}")
        out.add((min(u, v), max(u, v)))
    return tuple(sorted(out))


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on ``n`` workers."""

    n: int
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"need at least one worker, got n={self.n}")
        object.__setattr__(self, "edges", _normalize_edges(self.n, self.edges))

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return tuple(tuple(sorted(x)) for x in nbrs)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(x) for x in self.neighbors], dtype=int)

    @cached_property
    def hop(self) -> np.ndarray:
        """All-pairs hop distances (``-1`` for unreachable pairs)."""
        dist = np.full((self.n, self.n), -1, dtype=int)
        for s in range(self.n):
            dist[s] = _bfs_distances(self.neighbors, s)
        return dist

    @property
    def is_connected(self) -> bool:
        return bool((self.hop[0] >= 0).all())

    def require_connected(self) -> None:
        if not self.is_connected:
            missing = int(np.flatnonzero(self.hop[0] < 0)[0])
            raise DisconnectedGraphError(
                f"graph is disconnected: node {missing} is unreachable from node 0"
            )

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for u, v in self.edges:
            a[u, v] = a[v, u] = 1.0
        return a

    @property
    def is_tree(self) -> bool:
        return len(self.edges) == self.n - 1 and self.is_connected


@dataclass(frozen=True)
class Tree(Graph):
    """A connected acyclic graph with relay delays.

    Attributes beyond :class:`Graph` are computed lazily: ``hop`` (hop
    distances), ``delay`` (realized relay delays) and ``diameter``.
    """

    def __post_init__(self):
        super().__post_init__()
        if len(self.edges) != self.n - 1:
            raise ValueError(f"a tree on {self.n} nodes needs {self.n - 1} edges, got {len(self.edges)}")
        self.require_connected()

    @classmethod
    def from_graph(cls, g: Graph) -> "Tree":
        return cls(g.n, g.edges)

    @cached_property
    def delay(self) -> np.ndarray:
        return np.maximum(self.hop - 1, 0)

    @property
    def diameter(self) -> int:
        return int(self.hop.max())

    @property
    def tau_max(self) -> int:
        return int(self.delay.max())

    @cached_property
    def eccentricity(self) -> np.ndarray:
        return self.hop.max(axis=1)

    @cached_property
    def directed_edges(self) -> tuple[tuple[int, int], ...]:
        """Both orientations of every edge, ordered by (sender, receiver)."""
        return tuple(sorted([(u, v) for u, v in self.edges] + [(v, u) for u, v in self.edges]))


def _bfs_distances(neighbors, source: int) -> np.ndarray:
    dist = np.full(len(neighbors), -1, dtype=int)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in neighbors[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def build_topology(kind: str, n: int) -> Graph:
    """Build one of the canonical topologies.

    Tree kinds (``chain``, ``star``, ``balanced-binary-tree``) return a
    :class:`Tree`; ``ring`` returns a plain :class:`Graph` (for ``n >= 3``).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if kind == "chain":
        return Tree(n, [(i, i + 1) for i in range(n - 1)])
    if kind == "ring":
        if n < 3:
            raise ValueError(f"a ring needs n >= 3, got {n}")
        return Graph(n, [(i, (i + 1) % n) for i in range(n)])
    if kind == "star":
        return Tree(n, [(0, i) for i in range(1, n)])
    if kind == "balanced-binary-tree":
        return Tree(n, [((i - 1) // 2, i) for i in range(1, n)])
    raise ValueError(f"unknown topology kind {kind!r}; expected one of {TOPOLOGY_KINDS}")


def load_graph(text: str) -> Graph:
    """Parse an edge list: one ``u v`` pair per line, ``#`` starts a comment line."""
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"line {lineno}: expected 'u v', got {raw!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"line {lineno}: non-integer node id in {raw!r}") from None
        if u < 0 or v < 0:
            raise GraphFormatError(f"line {lineno}: negative node id in {raw!r}")
        if u == v:
            raise GraphFormatError(f"line {lineno}: self-loop on node {u}")
        edges.append((u, v))
    if not edges:
        raise GraphFormatError("edge list contains no edges")
    n = 1 + max(max(e) for e in edges)
    return Graph(n, edges)


def read_edge_list(path: str | Path) -> Graph:
    return load_graph(Path(path).read_text())


def davis_southern_women() -> Graph:
    """The 32-node Davis Southern Women social graph shipped with the package."""
    text = resources.files("relaysum.data").joinpath("davis_southern_women.txt").read_text()
    return load_graph(text)


def spanning_tree(g: Graph, seed: int, root: int | None = None) -> Tree:
    """Breadth-first spanning tree from a seeded random root.

    Each non-root node attaches to its lowest-id neighbour one level closer to
    the root, so the result depends only on ``(g, seed)``. Passing ``root``
    skips the election.
    """
    g.require_connected()
    if root is None:
        root = int(np.random.default_rng(seed).integers(g.n))
    dist = g.hop[root]
    edges = []
    for v in range(g.n):
        if v == root:
            continue
        parent = min(u for u in g.neighbors[v] if dist[u] == dist[v] - 1)
        edges.append((parent, v))
    return Tree(g.n, edges)


def metropolis_hastings(g: Graph) -> np.ndarray:
    """Symmetric doubly stochastic gossip matrix with Metropolis-Hastings weights."""
    g.require_connected()
    w = np.zeros((g.n, g.n))
    deg = g.degrees
    for u, v in g.edges:
        w[u, v] = w[v, u] = 1.0 / (1.0 + max(deg[u], deg[v]))
    w[np.diag_indices(g.n)] = 1.0 - w.sum(axis=1)
    return w


# -- double binary trees ------------------------------------------------------


def _inorder_binary_tree(n: int) -> list[tuple[int, int]]:
    # In-order labelling: node r with lowest set bit b has children r -/+ b/2,
    # so odd labels are leaves. Root 0 has a single child.
    edges = []
    for r in range(1, n):
        bit = r & -r
        up = (r ^ bit) | (bit << 1)
        if up >= n:
            up = r ^ bit
        edges.append((up, r))
    return edges


@dataclass(frozen=True)
class DoubleBinaryTrees:
    """Two complementary spanning trees; odd coordinates use ``tree_a``, even ``tree_b``.

    ``exceptions`` lists workers whose degree pattern violates the
    internal/leaf complement (degree 3 in one tree but not 1 in the other).
    """

    tree_a: Tree
    tree_b: Tree
    exceptions: tuple[int, ...] = field(default=())

    @staticmethod
    def coordinate_split(d: int) -> tuple[np.ndarray, np.ndarray]:
        idx = np.arange(d)
        return idx[idx % 2 == 1], idx[idx % 2 == 0]

    def traffic(self) -> np.ndarray:
        """Per-worker models sent each round (each tree carries half the coordinates)."""
        return (self.tree_a.degrees + self.tree_b.degrees) / 2.0


def double_binary_trees(n: int) -> DoubleBinaryTrees:
    """Complementary balanced binary trees for ``n`` workers.

    Tree A is an in-order labelled balanced binary tree (internal nodes carry
    even labels). Tree B relabels A by ``i -> i+1 mod n`` for odd ``n`` and
    mirrors it (``i -> n-1-i``) for even ``n``; both maps send internal labels
    onto leaf labels.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    a_edges = _inorder_binary_tree(n)
    if n % 2 == 1:
        relabel = lambda i: (i + 1) % n  # noqa: E731
    else:
        relabel = lambda i: n - 1 - i  # noqa: E731
    b_edges = [(relabel(u), relabel(v)) for u, v in a_edges]
    a, b = Tree(n, a_edges), Tree(n, b_edges)
    bad = [
        i
        for i in range(n)
        if (a.degrees[i] == 3 and b.degrees[i] != 1) or (b.degrees[i] == 3 and a.degrees[i] != 1)
    ]
    return DoubleBinaryTrees(a, b, tuple(bad))


# -- time-varying exponential graph -------------------------------------------


def _log2_exact(n: int) -> int:
    if n < 1 or n & (n - 1):
        raise ValueError(f"n must be a power of two, got {n}")
    return int(math.log2(n))


def exponential_offset(n: int, t: int) -> int:
    k = _log2_exact(n)
    if k == 0:
        return 0
    return 2 ** (t % k)


def exponential_pairs(n: int, t: int) -> list[tuple[int, int]]:
    """(sender, receiver) pairs of the exponential graph at exchange step ``t``.

    Worker ``i`` sends to ``(i - o) mod n`` with offset ``o = 2**(t mod log2 n)``.
    """
    o = exponential_offset(n, t)
    if o == 0:
        return []
    return [(i, (i - o) % n) for i in range(n)]
