"""Exact enumeration oracles for small instances.

Everything here works by brute force over {0,1}^m state spaces, so budgets are
enforced up front.  Bit i of a configuration index is the state of site i.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .connection import BoxLattice, ConnectionFunction, g_hat
from .percolation import exploration_run, small_graph
from .rng import derive_seed, keyed_uniform
from .sampler import RcmGraph

__all__ = [
    "FiniteMeasure",
    "DiscreteGraphPattern",
    "ClusterLaw",
    "DominationResult",
    "EpsilonTable",
    "g2_exact",
    "g2_monte_carlo",
    "connected_table",
    "cluster_law_exact",
    "tv_binomial_poisson",
    "poisson_product_pmf",
    "ghat_pattern_prob",
    "enumerate_upsets",
    "stochastic_dominates",
    "max_pivotal_epsilon",
    "verify_lemma_pivotal",
    "rooted_connected_graphs",
    "cramer_rate_check",
    "ldp_bound_eval",
]

DOMINATION_TOL = 1e-10
G2_MAX_POINTS = 6
CLUSTER_MAX_POINTS = 5
UPSET_MAX_M = 4


@dataclass(frozen=True, eq=False)
class FiniteMeasure:
    """Probability vector over {0,1}^m indexed by bitmask."""

    m: int
    probs: np.ndarray

    def __post_init__(self):
        if self.probs.shape != (1 << self.m,):
            raise ValueError(f"expected {1 << self.m} probabilities, got shape {self.probs.shape}")
        if np.any(self.probs < -1e-15) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("not a probability vector")

    @classmethod
    def product(cls, p: float, m: int) -> "FiniteMeasure":
        ones = np.array([bin(s).count("1") for s in range(1 << m)])
        return cls(m, p**ones * (1 - p) ** (m - ones))

    @classmethod
    def delta(cls, state: Sequence[int]) -> "FiniteMeasure":
        m = len(state)
        probs = np.zeros(1 << m)
        probs[sum(int(b) << i for i, b in enumerate(state))] = 1.0
        return cls(m, probs)

    def __call__(self, event) -> float:
        return float(sum(self.probs[s] for s in event))


def _pair_index(k: int):
    return list(itertools.combinations(range(k), 2))


@lru_cache(maxsize=None)
def connected_table(k: int) -> np.ndarray:
    """connected[mask] for every edge subset of K_k (edges in combinations order)."""
    pairs = _pair_index(k)
    masks = np.arange(1 << len(pairs), dtype=np.int64)
    reach = np.ones_like(masks)
    for _ in range(k - 1):
        for e, (a, b) in enumerate(pairs):
            has = (masks >> e) & 1 == 1
            touch = ((reach >> a) & 1) | ((reach >> b) & 1)
            reach = np.where(has & (touch == 1), reach | (1 << a) | (1 << b), reach)
    return reach == (1 << k) - 1


def _edge_probs(points: np.ndarray, g: ConnectionFunction) -> np.ndarray:
    pairs = _pair_index(len(points))
    return np.array([g.profile(np.linalg.norm(points[a] - points[b])) for a, b in pairs], dtype=np.float64)


def _mask_weights(probs: np.ndarray) -> np.ndarray:
    """Probability of each subset mask of independent events with the given probs."""
    e = len(probs)
    bits = (np.arange(1 << e)[:, None] >> np.arange(e)) & 1
    return np.prod(np.where(bits == 1, probs, 1.0 - probs), axis=1)


def g2_exact(points, g: ConnectionFunction) -> float:
    """Probability that the RCM on exactly these points is connected."""
    pts = np.asarray(points, dtype=np.float64)
    k = len(pts)
    if not 2 <= k <= G2_MAX_POINTS:
        raise ValueError(f"g2_exact handles 2..{G2_MAX_POINTS} points, got {k}")
    if pts.shape[1] != g.dimension:
        raise ValueError("point dimension differs from connection function")
    if len({tuple(p) for p in pts}) < k:
        raise ValueError("points must be distinct")
    w = _mask_weights(_edge_probs(pts, g))
    return float(w[connected_table(k)].sum())


def g2_monte_carlo(points, g: ConnectionFunction, reps: int, seed: int) -> float:
    """Frequency with which G_g on the fixed points is connected, over ``reps`` keyed edge draws."""
    points = np.asarray(points, dtype=np.float64)
    k = len(points)
    if not 2 <= k <= G2_MAX_POINTS:
        raise ValueError(f"need 2..{G2_MAX_POINTS} points")
    gv = _edge_probs(points, g)
    u = keyed_uniform(derive_seed(seed, "g2"), np.arange(reps, dtype=np.uint64)[:, None],
                      np.arange(len(gv), dtype=np.uint64)[None, :])
    masks = ((u <= gv[None, :]).astype(np.int64) << np.arange(len(gv))[None, :]).sum(axis=1)
    return float(connected_table(k)[masks].mean())


@dataclass(frozen=True, eq=False)
class ClusterLaw:
    size_pmf: dict  # |C0| -> probability
    joint: dict  # (|C0|, C0 misses the ghost field) -> probability
    p_miss: float  # P(C0 ∩ G = ∅)
    omega_given_miss: FiniteMeasure
    omega_given_hit: FiniteMeasure | None


def cluster_law_exact(points, g: ConnectionFunction, p: float, h: float) -> ClusterLaw:
    """Exact law of the root cluster with random edges, site percolation and ghost field.

    ``points[0]`` is the root.  Edges are Bernoulli(g(x - y)), non-root sites
    are open with probability p, and every vertex is green with probability
    1 - exp(-h); all three are enumerated.
    """
    pts = np.asarray(points, dtype=np.float64)
    k = len(pts)
    if not 1 <= k <= CLUSTER_MAX_POINTS:
        raise ValueError(f"cluster_law_exact handles 1..{CLUSTER_MAX_POINTS} points, got {k}")
    if not 0 <= p <= 1 or not h >= 0:
        raise ValueError("need p in [0, 1] and h >= 0")
    pairs = _pair_index(k)
    m = k - 1
    q = -math.expm1(-h)
    edge_w = _mask_weights(_edge_probs(pts, g)) if pairs else np.ones(1)
    site_w = _mask_weights(np.full(m, p)) if m else np.ones(1)
    ghost_w = _mask_weights(np.full(k, q))
    emask = np.arange(len(edge_w))[:, None]
    smask = np.arange(len(site_w))[None, :]
    open_v = 1 | (smask << 1)  # vertex bitmask of open vertices, root = vertex 0
    reach = np.ones((len(edge_w), len(site_w)), dtype=np.int64)
    for _ in range(max(k - 1, 0)):
        for e, (a, b) in enumerate(pairs):
            usable = ((emask >> e) & 1 == 1) & ((open_v >> a) & 1 == 1) & ((open_v >> b) & 1 == 1)
            touch = ((reach >> a) & 1) | ((reach >> b) & 1)
            reach = np.where(usable & (touch == 1), reach | (1 << a) | (1 << b), reach)
    size = np.vectorize(lambda r: bin(r).count("1"))(reach)
    w_es = edge_w[:, None] * site_w[None, :]
    ghosts = np.arange(len(ghost_w))
    miss = (reach[:, :, None] & ghosts[None, None, :]) == 0
    w_full = w_es[:, :, None] * ghost_w[None, None, :]
    size_pmf, joint = {}, {}
    for c in range(1, k + 1):
        sel = size == c
        size_pmf[c] = float(w_es[sel].sum())
        joint[(c, True)] = float(w_full[sel][miss[sel]].sum())
        joint[(c, False)] = float(w_full[sel][~miss[sel]].sum())
    miss_by_site = (w_full * miss).sum(axis=(0, 2))
    hit_by_site = (w_full * ~miss).sum(axis=(0, 2))
    p_miss = float(miss_by_site.sum())
    given_miss = FiniteMeasure(m, miss_by_site / p_miss) if p_miss > 0 else None
    p_hit = float(hit_by_site.sum())
    given_hit = FiniteMeasure(m, hit_by_site / p_hit) if p_hit > 1e-300 else None
    return ClusterLaw(size_pmf, joint, p_miss, given_miss, given_hit)


def tv_binomial_poisson(n: int, p: float) -> float:
    """Total variation distance between Binomial(n, p) and Poisson(np)."""
    if n < 1 or not 0.0 <= p <= 1.0:
        raise ValueError("need n >= 1 and p in [0, 1]")
    if p == 0.0:
        return 0.0
    ks = np.arange(n + 1)
    diff = np.abs(stats.binom.pmf(ks, n, p) - stats.poisson.pmf(ks, n * p)).sum()
    return float(0.5 * (diff + stats.poisson.sf(n, n * p)))


def poisson_product_pmf(mu: float, counts) -> float:
    counts = np.asarray(counts)
    if not mu > 0:
        raise ValueError("mu must be positive")
    if np.any(counts < 0) or np.any(counts != np.floor(counts)):
        raise ValueError("counts must be non-negative integers")
    return float(np.prod(stats.poisson.pmf(counts.astype(np.int64), mu)))


@dataclass(frozen=True)
class DiscreteGraphPattern:
    """A graph on lattice centers; ``vertices[0]`` is the box of the distinguished point."""

    vertices: tuple
    edges: frozenset  # {(k, l)} with k < l, positions in ``vertices``
    values: Mapping = field(default_factory=dict)  # (k, l) -> ghat value

    @classmethod
    def on_lattice(cls, centers, edges, g: ConnectionFunction, lat: BoxLattice) -> "DiscreteGraphPattern":
        centers = tuple(tuple(float(c) for c in z) for z in centers)
        vals = {(a, b): g_hat(g, lat, centers[a], centers[b]) for a, b in _pair_index(len(centers))}
        return cls(centers, frozenset((min(a, b), max(a, b)) for a, b in edges), vals)

    def component_of_first(self) -> set:
        comp, stack = {0}, [0]
        while stack:
            v = stack.pop()
            for a, b in self.edges:
                for x, y in ((a, b), (b, a)):
                    if x == v and y not in comp:
                        comp.add(y)
                        stack.append(y)
        return comp


def ghat_pattern_prob(f: DiscreteGraphPattern) -> float:
    """Product of ghat over pattern edges times (1 - ghat) over non-edges."""
    out = 1.0
    for pair in _pair_index(len(f.vertices)):
        if pair not in f.values:
            raise ValueError(f"missing ghat value for vertex pair {pair}")
        v = f.values[pair]
        out *= v if pair in f.edges else 1.0 - v
    return out


@lru_cache(maxsize=None)
def _upset_masks(m: int) -> np.ndarray:
    """Bitmask (over the 2^m states) of every up-closed family, found by filtering."""
    n_states = 1 << m
    fams = np.arange(1 << n_states, dtype=np.int64)
    ok = np.ones(len(fams), dtype=bool)
    for x in range(n_states):
        has_x = (fams >> x) & 1 == 1
        for i in range(m):
            y = x | (1 << i)
            if y != x:
                ok &= ~has_x | ((fams >> y) & 1 == 1)
    return fams[ok]


def enumerate_upsets(m: int) -> list[frozenset]:
    """All subsets of {0,1}^m (as sets of state bitmasks) closed under raising coordinates."""
    if not 0 <= m <= UPSET_MAX_M:
        raise ValueError(f"enumerate_upsets supports m <= {UPSET_MAX_M}")
    return [frozenset(s for s in range(1 << m) if (f >> s) & 1) for f in _upset_masks(m)]


@dataclass(frozen=True)
class DominationResult:
    holds: bool
    witness: frozenset | None
    max_violation: float

    def __bool__(self) -> bool:
        return self.holds


def stochastic_dominates(mu: FiniteMeasure, nu: FiniteMeasure, tol: float = DOMINATION_TOL) -> DominationResult:
    """mu ⪯ nu: mu(U) <= nu(U) + tol for every up-set U."""
    if mu.m != nu.m:
        raise ValueError("measures live on different spaces")
    if mu.m > UPSET_MAX_M:
        raise ValueError(f"domination check supports m <= {UPSET_MAX_M}")
    fams = _upset_masks(mu.m)
    member = ((fams[:, None] >> np.arange(1 << mu.m)[None, :]) & 1).astype(np.float64)
    gap = member @ mu.probs - member @ nu.probs
    worst = int(np.argmax(gap))
    if gap[worst] > tol:
        f = int(fams[worst])
        return DominationResult(False, frozenset(s for s in range(1 << mu.m) if (f >> s) & 1), float(gap[worst]))
    return DominationResult(True, None, float(max(gap[worst], 0.0)))


@dataclass(frozen=True)
class EpsilonTable:
    epsilon: float
    rows: tuple  # (prefix, next vertex, conditional pivotality probability)
    p_event: float


def _root_cluster_mask(graph: RcmGraph, root: int, open_v: np.ndarray) -> int:
    seen = {root}
    stack = [root]
    while stack:
        v = stack.pop()
        for u in graph.neighbors(v):
            u = int(u)
            if u not in seen and open_v[u]:
                seen.add(u)
                stack.append(u)
    return sum(1 << v for v in seen)


def _check_small(graph: RcmGraph, root: int):
    if graph.n > CLUSTER_MAX_POINTS or len(graph.vertices) != graph.n:
        raise ValueError(f"exact pivotality needs a graph on ids 0..n-1 with n <= {CLUSTER_MAX_POINTS}")
    if not 0 <= root < graph.n:
        raise ValueError("root is not a vertex")


def _configurations(graph: RcmGraph, root: int, p: float, h: float):
    sites = [v for v in range(graph.n) if v != root]
    m = len(sites)
    q = -math.expm1(-h)
    site_w = _mask_weights(np.full(m, p)) if m else np.ones(1)
    ghost_w = _mask_weights(np.full(graph.n, q))

    def open_array(mask):
        o = np.zeros(graph.n, dtype=bool)
        o[root] = True
        for i, v in enumerate(sites):
            o[v] = bool((mask >> i) & 1)
        return o

    c0 = [_root_cluster_mask(graph, root, open_array(s)) for s in range(1 << m)]
    return sites, site_w, ghost_w, c0, open_array


def max_pivotal_epsilon(graph: RcmGraph, root: int, p: float, h: float) -> EpsilonTable:
    """Largest conditional pivotality probability over exploration prefixes.

    The event is A = {C0 ∩ G = ∅} (root cluster of open vertices misses the
    ghost field); a vertex is pivotal when switching it changes whether A holds.
    For every prefix Expl_k with P(A ∩ Expl_k) > 0 the probability
    P[v_{k+1} pivotal | A ∩ Expl_k] is computed by enumeration of (omega, G).
    """
    _check_small(graph, root)
    sites, site_w, ghost_w, c0, open_array = _configurations(graph, root, p, h)
    m = len(sites)
    bit = {v: i for i, v in enumerate(sites)}
    ghosts = np.arange(len(ghost_w))
    num: dict = {}
    den: dict = {}
    nxt: dict = {}
    for s in range(1 << m):
        if site_w[s] == 0.0:
            continue
        expl = exploration_run(graph, open_array(s), root)
        in_a = (c0[s] & ghosts) == 0
        for k in range(m):
            key = expl.prefix(k)
            v = expl.order[k]
            if nxt.setdefault(key, v) != v:
                raise AssertionError("exploration is not adapted")
            s1, s0 = s | (1 << bit[v]), s & ~(1 << bit[v])
            piv = ((c0[s1] & ghosts) == 0) != ((c0[s0] & ghosts) == 0)
            w = site_w[s] * ghost_w
            den[key] = den.get(key, 0.0) + float(w[in_a].sum())
            num[key] = num.get(key, 0.0) + float(w[in_a & piv].sum())
    rows = []
    eps = 0.0
    for key in sorted(den, key=lambda k: (len(k), k)):
        if den[key] <= 0.0:
            continue
        prob = num[key] / den[key]
        rows.append((key, nxt[key], prob))
        eps = max(eps, prob)
    p_event = float(sum(site_w[s] * ghost_w[(c0[s] & ghosts) == 0].sum() for s in range(1 << m)))
    return EpsilonTable(float(min(eps, 1.0)), tuple(rows), p_event)


def verify_lemma_pivotal(graph: RcmGraph, root: int, p: float, h: float) -> dict:
    """Check P_{p(1-eps)} ⪯ P_{p,h}[omega ∈ · | C0 ∩ G = ∅] exactly."""
    _check_small(graph, root)
    if graph.n - 1 > UPSET_MAX_M:
        raise ValueError(f"at most {UPSET_MAX_M} non-root vertices")
    table = max_pivotal_epsilon(graph, root, p, h)
    report = {
        "instance": {"n": graph.n, "root": root, "edges": [list(map(int, e)) for e in graph.edges]},
        "parameters": {"p": p, "h": h},
        "epsilon": table.epsilon,
    }
    if table.p_event <= 0.0:
        report.update(vacuous=True, **{"pass": True})
        return report
    sites, site_w, ghost_w, c0, _ = _configurations(graph, root, p, h)
    ghosts = np.arange(len(ghost_w))
    cond = np.array([site_w[s] * ghost_w[(c0[s] & ghosts) == 0].sum() for s in range(len(site_w))])
    cond /= cond.sum()
    lower = FiniteMeasure.product(p * (1.0 - table.epsilon), len(sites))
    res = stochastic_dominates(lower, FiniteMeasure(len(sites), cond))
    report.update(vacuous=False, max_violation=res.max_violation, **{"pass": res.holds})
    if not res.holds:
        report["witness"] = sorted(res.witness)
    return report


def rooted_connected_graphs(max_non_root: int = 4) -> list[RcmGraph]:
    """Connected graphs with root 0 on 1..max_non_root+1 vertices, one per rooted isomorphism class."""
    out = []
    for n in range(1, max_non_root + 2):
        pairs = _pair_index(n)
        conn = connected_table(n) if n > 1 else np.array([True])
        seen = set()
        perms = [(0,) + p for p in itertools.permutations(range(1, n))]
        for mask in range(1 << len(pairs)):
            if not conn[mask]:
                continue
            edges = [pairs[e] for e in range(len(pairs)) if (mask >> e) & 1]
            canon = min(tuple(sorted(tuple(sorted((pm[a], pm[b]))) for a, b in edges)) for pm in perms)
            if canon in seen:
                continue
            seen.add(canon)
            out.append(small_graph(n, list(canon), root=0))
    return out


def cramer_rate_check(alphas) -> bool:
    """(1+a)ln(1+a) - a >= a^2/4 and a + (1-a)ln(1-a) >= a^2/12 for every a."""
    a = np.asarray(alphas, dtype=np.float64)
    if np.any(a <= 0) or np.any(a > 0.5):
        raise ValueError("alpha values must lie in (0, 1/2]")
    upper = (1 + a) * np.log1p(a) - a
    lower = a + (1 - a) * np.log1p(-a)
    return bool(np.all(upper >= a**2 / 4) and np.all(lower >= a**2 / 12))


def ldp_bound_eval(intensity: float, s: float, alpha: float, K: float, N: float, d: int) -> float:
    """1 - 2 (K/s)^d exp(-intensity s^d alpha^2 N / 24)."""
    BoxLattice(K, s, d)  # validates K/s
    if not intensity > 0 or not N > 0 or not 0 <= alpha <= 0.5:
        raise ValueError("need intensity > 0, N > 0 and alpha in [0, 1/2]")
    n_boxes = round(K / s) ** d
    return 1.0 - 2.0 * n_boxes * math.exp(-intensity * s**d * alpha**2 * N / 24.0)
