"""Site percolation on rooted graphs, ghost fields, exploration and pivotality."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .connection import ConnectionFunction
from .rng import derive_seed, keyed_uniform
from .sampler import (
    PairUniformSource,
    PointSample,
    RcmGraph,
    add_root,
    build_graph,
    sample_poisson,
)

__all__ = [
    "SiteConfig",
    "GhostField",
    "Exploration",
    "small_graph",
    "sample_site_config",
    "sample_ghost",
    "thinned_graph",
    "thinning_construction",
    "exploration_run",
    "is_pivotal",
    "connected_to_green",
    "green_reach_all",
]

_TAG_SITE = 0x534954455F4F4D45
_TAG_GHOST = 0x47484F53545F4649


@dataclass(frozen=True, eq=False)
class SiteConfig:
    """Open/closed state per vertex id; the root is always open."""

    open: np.ndarray
    root: int
    p: float

    def __post_init__(self):
        if not self.open[self.root]:
            raise ValueError("the root can never be closed")

    def flipped(self, x: int, state: bool) -> "SiteConfig":
        o = self.open.copy()
        o[x] = state
        return SiteConfig(o, self.root, self.p)


@dataclass(frozen=True, eq=False)
class GhostField:
    green: np.ndarray
    h: float


def small_graph(n: int, edges: Sequence[tuple[int, int]], root: int | None = 0) -> RcmGraph:
    """Graph on ids 0..n-1 from an explicit edge list."""
    e = np.array(sorted((min(a, b), max(a, b)) for a, b in set(tuple(x) for x in edges)), dtype=np.int64)
    if len(e) and np.any(e[:, 0] == e[:, 1]):
        raise ValueError("self-loops are not allowed")
    return RcmGraph(n, np.arange(n), e.reshape(-1, 2), "explicit", root)


def sample_site_config(graph: RcmGraph, root: int, p: float, seed: int) -> SiteConfig:
    """Independent Bernoulli(p) states on the non-root vertices.

    A vertex is open when its keyed uniform is below p, so configurations for
    different p on the same seed are monotonically coupled.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if root not in graph:
        raise ValueError("root is not a vertex of the graph")
    u = keyed_uniform(seed, _TAG_SITE, graph.vertices)
    state = np.zeros(graph.n, dtype=bool)
    state[graph.vertices] = u < p
    state[root] = True
    return SiteConfig(state, int(root), float(p))


def sample_ghost(vertices, h: float, seed: int, n: int | None = None) -> GhostField:
    """Each listed vertex is green with probability 1 - exp(-h), independently."""
    if not h >= 0:
        raise ValueError(f"h must be non-negative, got {h}")
    vertices = np.asarray(vertices, dtype=np.int64)
    n = int(n if n is not None else (vertices.max() + 1 if len(vertices) else 0))
    q = -math.expm1(-h)
    green = np.zeros(n, dtype=bool)
    if len(vertices):
        green[vertices] = keyed_uniform(seed, _TAG_GHOST, vertices) < q
    return GhostField(green, float(h))


def thinned_graph(graph: RcmGraph, omega: SiteConfig, root: int) -> RcmGraph:
    """Induced subgraph on the open vertices plus the root."""
    if len(omega.open) != graph.n or omega.root != root:
        raise ValueError("site configuration does not match the graph")
    keep = omega.open.copy()
    keep[root] = True
    present = np.zeros(graph.n, dtype=bool)
    present[graph.vertices] = True
    keep &= present
    e = graph.edges
    ok = keep[e[:, 0]] & keep[e[:, 1]] if len(e) else np.zeros(0, bool)
    return RcmGraph(graph.n, np.nonzero(keep)[0], e[ok], graph.tag, root)


def thinning_construction(intensity: float, N: int, g: ConnectionFunction, side: float, seed: int):
    """Intensity-(N*intensity) rooted RCM, a 1/N site configuration, and the thinned graph.

    Returns ``(sample, dense_graph, omega, thinned)``; the thinned graph has the
    law of the rooted RCM at the original intensity.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    if not intensity > 0:
        raise ValueError("intensity must be positive")
    sample = add_root(sample_poisson(N * intensity, side, g.dimension, derive_seed(seed, "points")))
    src = PairUniformSource(derive_seed(seed, "pairs"))
    strategy = "cell-list" if math.isfinite(g.support_radius) else "dense"
    dense = build_graph(sample, g, src, strategy)
    omega = sample_site_config(dense, sample.root, 1.0 / N, derive_seed(seed, "site"))
    return sample, dense, omega, thinned_graph(dense, omega, sample.root)


@dataclass(frozen=True)
class Exploration:
    order: tuple  # v_1, ..., v_{|V|-1}
    states: tuple  # omega(v_1), ..., omega(v_{|V|-1})

    def prefix(self, k: int) -> tuple:
        return tuple(zip(self.order[:k], self.states[:k]))


def exploration_run(graph: RcmGraph, omega, root: int, fixed_order: Sequence[int] | None = None) -> Exploration:
    """Cluster-first exploration.

    Repeatedly reveal the unrevealed vertex of lowest rank in ``fixed_order``
    that is adjacent to the root's cluster of revealed-open vertices; when there
    is none, reveal the remaining vertices in ``fixed_order`` (default: id order).
    Step k+1 only reads the states revealed in steps 1..k.
    """
    state = omega.open if isinstance(omega, SiteConfig) else np.asarray(omega, dtype=bool)
    others = [int(v) for v in graph.vertices if v != root]
    if fixed_order is None:
        fixed_order = others
    fixed_order = [int(v) for v in fixed_order]
    if sorted(fixed_order) != sorted(others):
        raise ValueError("fixed_order must be a total order of the non-root vertices")
    rank = {v: i for i, v in enumerate(fixed_order)}
    revealed: set[int] = set()
    cluster = {int(root)}
    frontier = {int(u) for u in graph.neighbors(root)}
    order, states = [], []
    pending = iter(fixed_order)
    while len(order) < len(fixed_order):
        cand = frontier - revealed - cluster
        if cand:
            v = min(cand, key=rank.__getitem__)
        else:
            v = next(x for x in pending if x not in revealed)
        revealed.add(v)
        s = bool(state[v])
        order.append(v)
        states.append(s)
        if s and v in frontier:
            cluster.add(v)
            frontier.update(int(u) for u in graph.neighbors(v))
    return Exploration(tuple(order), tuple(states))


def is_pivotal(omega: SiteConfig, ghost: GhostField, x: int,
               event: Callable[[np.ndarray, np.ndarray], bool]) -> bool:
    """True when switching x between closed and open changes whether ``event`` holds.

    ``event(open_mask, green_mask)`` is evaluated at both states of x with
    everything else fixed.
    """
    if x == omega.root:
        raise ValueError("the root has no state to flip")
    o0 = omega.open.copy()
    o1 = omega.open.copy()
    o0[x] = False
    o1[x] = True
    return bool(event(o1, ghost.green)) != bool(event(o0, ghost.green))


def connected_to_green(graph: RcmGraph, omega, ghost: GhostField, x: int) -> bool:
    """x is green, or some green vertex w_m is reached by x, w_1, ..., w_m with w_1..w_m open."""
    state = omega.open if isinstance(omega, SiteConfig) else np.asarray(omega, dtype=bool)
    green = ghost.green
    if green[x]:
        return True
    seen = {int(x)}
    stack = [int(x)]
    while stack:
        v = stack.pop()
        for u in graph.neighbors(v):
            u = int(u)
            if u in seen or not state[u]:
                continue
            if green[u]:
                return True
            seen.add(u)
            stack.append(u)
    return False


def green_reach_all(adjacency: sparse.csr_matrix, open_mask: np.ndarray, green: np.ndarray) -> np.ndarray:
    """connected_to_green for every vertex at once (same path rule)."""
    n = adjacency.shape[0]
    keep = sparse.diags(open_mask.astype(np.int8))
    sub = keep @ adjacency @ keep
    _, label = csgraph.connected_components(sub, directed=False)
    hot_comp = np.zeros(n, dtype=bool)
    hot_comp[label[open_mask & green]] = True
    hot = open_mask & hot_comp[label]
    return green | (adjacency @ hot.astype(np.int32) > 0)
