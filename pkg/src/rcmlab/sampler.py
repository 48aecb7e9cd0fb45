"""Poisson sampling, keyed pair uniforms, RCM graph construction and cluster exploration."""

from __future__ import annotations

import csv
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .connection import BoxLattice, ConnectionFunction, g_hat_indices
from .rng import keyed_uniform

__all__ = [
    "PointSample",
    "PairUniformSource",
    "RcmGraph",
    "BoxSupremum",
    "QuotientGraph",
    "ClusterResult",
    "ROOT_KEY",
    "sample_poisson",
    "add_root",
    "pair_uniform",
    "build_graph",
    "build_coupled",
    "quotient_graph",
    "explore_cluster",
    "lazy_cluster",
    "write_graph_csv",
]

# Uniform key reserved for the added root; never produced by sample_poisson.
ROOT_KEY = (1 << 64) - 1

_BATCH = 256
_TAG_POINT = 0x5049445F504F494E
_TAG_TENSOR = 0x54454E534F525F55
_DENSE_BLOCK = 4_000_000


@dataclass(frozen=True, eq=False)
class PointSample:
    """Points of a Poisson process in the cube window center + [-L/2, L/2)^d.

    Vertex ids are array positions.  ``keys`` are the stable identities used for
    pair uniforms; for sampled points the key is the rank of the point in the
    sup-norm shell order, so the same seed yields nested samples as the window
    grows.
    """

    side: float
    center: tuple
    intensity: float
    positions: np.ndarray
    keys: np.ndarray
    seed: int | None = None
    root: int | None = None

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def n_points(self) -> int:
        """Number of Poisson points, excluding an added root."""
        return self.n - (self.root is not None)

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.n)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64) - np.asarray(self.center)
        h = self.side / 2
        return bool(np.all(x >= -h) and np.all(x < h))


def sample_poisson(intensity: float, side: float, d: int, seed: int, center=None) -> PointSample:
    """Homogeneous Poisson process of the given intensity in a cube of side ``side``.

    Points are generated in increasing sup-norm distance from the window center:
    the enclosed volume (2 rho)^d runs as a rate-``intensity`` Poisson process and
    each point is uniform on the surface of its sup-norm sphere.  The result has
    the law of n ~ Poisson(intensity * side^d) uniform points, and the first k
    points do not depend on ``side``.
    """
    if not intensity > 0 or not math.isfinite(intensity):
        raise ValueError(f"intensity must be positive, got {intensity}")
    if not side > 0 or not math.isfinite(side):
        raise ValueError(f"window side must be positive, got {side}")
    if int(d) != d or d < 1:
        raise ValueError("dimension must be a positive integer")
    center = tuple(float(c) for c in (center if center is not None else (0.0,) * d))
    if len(center) != d:
        raise ValueError("center dimension mismatch")
    rng = np.random.default_rng(seed)
    vmax = float(side) ** d
    vol, chunks = 0.0, []
    while True:
        gaps = rng.exponential(1.0 / intensity, _BATCH)
        faces = rng.integers(0, 2 * d, _BATCH)
        coords = rng.random((_BATCH, d))
        v = vol + np.cumsum(gaps)
        keep = v < vmax
        rho = 0.5 * v[keep] ** (1.0 / d)
        pts = (2.0 * coords[keep] - 1.0) * rho[:, None]
        f = faces[keep]
        rows = np.arange(len(f))
        pts[rows, f // 2] = np.where(f % 2 == 0, -rho, rho)
        chunks.append(pts)
        if not keep.all():
            break
        vol = float(v[-1])
    pos = np.concatenate(chunks) + np.asarray(center)
    # guard the half-open upper faces against rounding
    hi = np.asarray(center) + side / 2
    pos = np.minimum(pos, np.nextafter(hi, -np.inf))
    return PointSample(float(side), center, float(intensity), pos, np.arange(len(pos), dtype=np.uint64), seed)


def add_root(sample: PointSample, x=None) -> PointSample:
    """Append a deterministic point (default: the window center) as the root."""
    if sample.root is not None:
        raise ValueError("sample already has a root")
    x = np.asarray(x if x is not None else sample.center, dtype=np.float64)
    if x.shape != (sample.d,) or not sample.contains(x):
        raise ValueError("root must be a point inside the window")
    pos = np.vstack([sample.positions, x[None, :]])
    keys = np.append(sample.keys, np.uint64(ROOT_KEY))
    return PointSample(sample.side, sample.center, sample.intensity, pos, keys, sample.seed, sample.n)


def restrict(sample: PointSample, mask) -> PointSample:
    """Sub-sample keeping the given vertices (root kept at the end if retained)."""
    mask = np.asarray(mask, dtype=bool)
    idx = np.nonzero(mask)[0]
    root = None
    if sample.root is not None and mask[sample.root]:
        idx = np.append(idx[idx != sample.root], sample.root)
        root = len(idx) - 1
    return PointSample(sample.side, sample.center, sample.intensity, sample.positions[idx],
                       sample.keys[idx], sample.seed, root)


@dataclass(frozen=True)
class PairUniformSource:
    """Deterministic symmetric uniforms U(a, b) = U(b, a).

    ``scheme="point-id"`` keys on point identities.  ``scheme="box-tensor"`` keys
    on (box, index-within-box) pairs with the lexicographically smaller key first,
    so U^{w,z}_{i,j} = U^{z,w}_{j,i}.
    """

    seed: int
    scheme: str = "point-id"
    lattice: BoxLattice | None = None

    def __post_init__(self):
        if self.scheme not in ("point-id", "box-tensor"):
            raise ValueError(f"unknown keying scheme {self.scheme!r}")
        if self.scheme == "box-tensor" and self.lattice is None:
            raise ValueError("box-tensor keying needs a lattice")

    def vertex_keys(self, sample: PointSample) -> np.ndarray:
        """Per-vertex key: uint64 ids, or (box, index) rows for the tensor scheme."""
        if self.scheme == "point-id":
            return sample.keys
        return tensor_labels(sample, self.lattice)

    def pairs(self, vkeys: np.ndarray, i, j) -> np.ndarray:
        i = np.asarray(i)
        j = np.asarray(j)
        if self.scheme == "point-id":
            a, b = vkeys[i], vkeys[j]
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            return keyed_uniform(self.seed, _TAG_POINT, lo, hi)
        ka, kb = vkeys[i], vkeys[j]
        a_first = (ka[:, 0] < kb[:, 0]) | ((ka[:, 0] == kb[:, 0]) & (ka[:, 1] <= kb[:, 1]))
        lo = np.where(a_first[:, None], ka, kb)
        hi = np.where(a_first[:, None], kb, ka)
        return keyed_uniform(self.seed, _TAG_TENSOR, lo[:, 0], lo[:, 1], hi[:, 0], hi[:, 1])


def tensor_labels(sample: PointSample, lat: BoxLattice) -> np.ndarray:
    """(flat box index, rank of the point within its box in lexicographic order)."""
    box = lat.flat(lat.index_of(sample.positions))
    pos = sample.positions
    order = np.lexsort(tuple(pos[:, a] for a in reversed(range(sample.d))) + (box,))
    sorted_box = box[order]
    starts = np.r_[0, np.nonzero(np.diff(sorted_box))[0] + 1]
    run_start = np.repeat(starts, np.diff(np.r_[starts, len(order)]))
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order)) - run_start
    return np.stack([box.astype(np.int64), rank], axis=1).astype(np.uint64)


def pair_uniform(src: PairUniformSource, key_a, key_b) -> float:
    """U for one pair of keys: ints for point-id, (box, index) tuples for box-tensor."""
    if src.scheme == "point-id":
        if int(key_a) == int(key_b):
            raise ValueError("pair uniform needs two distinct keys")
        vk = np.array([int(key_a), int(key_b)], dtype=np.uint64)
    else:
        ka, kb = tuple(int(v) for v in key_a), tuple(int(v) for v in key_b)
        if len(ka) != 2 or len(kb) != 2:
            raise ValueError("box-tensor keys are (box, index) pairs")
        if ka == kb:
            raise ValueError("pair uniform needs two distinct keys")
        vk = np.array([ka, kb], dtype=np.uint64)
    return float(src.pairs(vk, np.array([0]), np.array([1]))[0])


@dataclass(frozen=True, eq=False)
class RcmGraph:
    """Undirected simple graph on a subset of the ids 0..n-1 with i<j edge rows."""

    n: int
    vertices: np.ndarray
    edges: np.ndarray
    tag: str = ""
    root: int | None = None

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        e = self.edges
        data = np.ones(2 * len(e), dtype=np.int8)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def _present(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[self.vertices] = True
        return m

    def __contains__(self, v) -> bool:
        return 0 <= int(v) < self.n and bool(self._present[int(v)])

    def neighbors(self, v: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[v]:a.indptr[v + 1]]

    def adjacency_lists(self) -> dict[int, list[int]]:
        return {int(v): sorted(int(u) for u in self.neighbors(v)) for v in self.vertices}

    @property
    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.edges}

    @property
    def n_edges(self) -> int:
        return len(self.edges)


def _make_graph(n, vertices, i, j, tag, root) -> RcmGraph:
    e = np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1).astype(np.int64) if len(i) else np.empty((0, 2), np.int64)
    if len(e):
        e = e[np.lexsort((e[:, 1], e[:, 0]))]
    return RcmGraph(int(n), np.asarray(vertices, dtype=np.int64), e, tag, root)


def _dense_pairs(n: int):
    """Yield (i, j) blocks covering all i < j."""
    if n * (n - 1) // 2 <= _DENSE_BLOCK:
        i, j = np.triu_indices(n, 1)
        yield i, j
        return
    rows = max(1, _DENSE_BLOCK // n)
    for start in range(0, n - 1, rows):
        stop = min(n - 1, start + rows)
        i = np.repeat(np.arange(start, stop), n - 1 - np.arange(start, stop))
        j = np.concatenate([np.arange(k + 1, n) for k in range(start, stop)])
        yield i, j


def _cell_pairs(pos: np.ndarray, side: float):
    """All i < j pairs in the same or neighbouring cells of a grid with the given side."""
    n, d = pos.shape
    if n < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    lo = pos.min(axis=0)
    cell = np.floor((pos - lo) / side).astype(np.int64)
    shape = cell.max(axis=0) + 1
    flat = np.ravel_multi_index(tuple(cell.T), tuple(shape))
    order = np.argsort(flat, kind="stable")
    sflat = flat[order]
    n_cells = int(np.prod(shape))
    start = np.searchsorted(sflat, np.arange(n_cells), side="left")
    stop = np.searchsorted(sflat, np.arange(n_cells), side="right")
    out_i, out_j = [], []
    for off in itertools.product((-1, 0, 1), repeat=d):
        off = np.array(off)
        if tuple(off) < (0,) * d:
            continue  # half neighbourhood; each unordered cell pair once
        nb = cell + off
        ok = np.all((nb >= 0) & (nb < shape), axis=1)
        src = np.nonzero(ok)[0]
        nbf = np.ravel_multi_index(tuple(nb[src].T), tuple(shape))
        counts = stop[nbf] - start[nbf]
        ii = np.repeat(src, counts)
        base = np.repeat(start[nbf] - np.cumsum(np.r_[0, counts[:-1]]), counts)
        jj = order[base + np.arange(counts.sum())]
        if not off.any():
            keep = ii < jj
            ii, jj = ii[keep], jj[keep]
        out_i.append(ii)
        out_j.append(jj)
    return np.concatenate(out_i), np.concatenate(out_j)


def build_graph(sample: PointSample, g: ConnectionFunction, src: PairUniformSource,
                strategy: str = "dense") -> RcmGraph:
    """G_g on the sample: edge xy iff U(x, y) <= g(x - y)."""
    if g.dimension != sample.d:
        raise ValueError("connection function dimension differs from sample dimension")
    vkeys = src.vertex_keys(sample)
    pos = sample.positions
    if strategy == "dense":
        blocks = _dense_pairs(sample.n)
    elif strategy == "cell-list":
        if not math.isfinite(g.support_radius):
            raise ValueError("cell-list strategy needs a connection function with bounded support")
        blocks = [_cell_pairs(pos, g.support_radius)]
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    ei, ej = [], []
    for i, j in blocks:
        gv = g.profile(np.linalg.norm(pos[i] - pos[j], axis=1))
        live = gv > 0
        i, j, gv = i[live], j[live], gv[live]
        hit = src.pairs(vkeys, i, j) <= gv
        ei.append(i[hit])
        ej.append(j[hit])
    i = np.concatenate(ei) if ei else np.empty(0, np.int64)
    j = np.concatenate(ej) if ej else np.empty(0, np.int64)
    return _make_graph(sample.n, np.arange(sample.n), i, j, g.family, sample.root)


@dataclass(frozen=True)
class BoxSupremum:
    """Marker for the box-supremum discretisation of ``g`` on a lattice."""

    g: ConnectionFunction


def build_coupled(sample: PointSample, g_list: Sequence, src: PairUniformSource,
                  lat: BoxLattice | None = None) -> list[RcmGraph]:
    """One graph per function, all driven by the same pair uniforms."""
    for g in g_list:
        base = g.g if isinstance(g, BoxSupremum) else g
        if base.dimension != sample.d:
            raise ValueError("connection function dimension differs from sample dimension")
    need_lat = any(isinstance(g, BoxSupremum) for g in g_list)
    if need_lat:
        if lat is None:
            raise ValueError("box-supremum form needs a lattice")
        if lat.d != sample.d:
            raise ValueError("lattice dimension differs from sample dimension")
        box = lat.index_of(sample.positions)
    vkeys = src.vertex_keys(sample)
    pos = sample.positions
    edges = [([], []) for _ in g_list]
    for i, j in _dense_pairs(sample.n):
        u = src.pairs(vkeys, i, j)
        dist = np.linalg.norm(pos[i] - pos[j], axis=1)
        for k, g in enumerate(g_list):
            gv = g_hat_indices(g.g, lat, box[i], box[j]) if isinstance(g, BoxSupremum) else g.profile(dist)
            hit = (u <= gv) & (gv > 0)
            edges[k][0].append(i[hit])
            edges[k][1].append(j[hit])
    out = []
    for g, (ei, ej) in zip(g_list, edges):
        tag = f"box-sup({g.g.family},s={lat.s})" if isinstance(g, BoxSupremum) else g.family
        out.append(_make_graph(sample.n, np.arange(sample.n), np.concatenate(ei), np.concatenate(ej), tag, sample.root))
    return out


@dataclass(frozen=True)
class QuotientGraph:
    lattice: BoxLattice
    vertices: tuple  # sorted flat box indices
    edges: frozenset  # {(a, b)} with a < b, flat box indices

    @property
    def centers(self) -> np.ndarray:
        idx = np.stack(np.unravel_index(np.array(self.vertices, dtype=np.int64),
                                        (self.lattice.per_axis,) * self.lattice.d), axis=-1)
        return self.lattice.center_of(idx)


def quotient_graph(graph: RcmGraph, sample: PointSample, lat: BoxLattice) -> QuotientGraph:
    """Collapse each vertex to its box; self-loops are dropped."""
    box = lat.flat(lat.index_of(sample.positions))
    verts = tuple(sorted({int(box[v]) for v in graph.vertices}))
    es = set()
    for a, b in graph.edges:
        ba, bb = int(box[a]), int(box[b])
        if ba != bb:
            es.add((min(ba, bb), max(ba, bb)))
    return QuotientGraph(lat, verts, frozenset(es))


@dataclass(frozen=True)
class ClusterResult:
    vertices: tuple
    censored: bool  # True means "size >= cap"

    @property
    def size(self) -> int:
        return len(self.vertices)


def explore_cluster(graph: RcmGraph, root: int, cap: int | None = None) -> ClusterResult:
    """Breadth-first cluster of ``root``; stops once ``cap`` vertices are found."""
    if root not in graph:
        raise ValueError(f"root {root} is not a vertex of the graph")
    if cap is not None and cap < 1:
        raise ValueError("cap must be at least 1")
    seen = {int(root)}
    order = [int(root)]
    queue = deque(order)
    while queue:
        if cap is not None and len(order) >= cap:
            break
        v = queue.popleft()
        for u in graph.neighbors(v):
            u = int(u)
            if u not in seen:
                seen.add(u)
                order.append(u)
                queue.append(u)
                if cap is not None and len(order) >= cap:
                    break
    censored = cap is not None and len(order) >= cap
    if censored:
        order = order[:cap]
    return ClusterResult(tuple(order), censored)


def lazy_cluster(sample: PointSample, g: ConnectionFunction, src: PairUniformSource, root: int,
                 cap: int | None = None, active=None, lat: BoxLattice | None = None,
                 vkeys=None) -> ClusterResult:
    """Cluster of ``root`` without materialising the graph.

    Only pairs touching explored vertices are evaluated, so the cost scales with
    cluster size times sample size.  ``active`` restricts the walk to a vertex
    subset (the root is always admitted); with ``lat`` the edges are drawn
    against the box supremum of ``g``.  Uses the same uniforms as
    :func:`build_graph`, so the result equals ``explore_cluster`` on the built graph.
    """
    n = sample.n
    pos = sample.positions
    if vkeys is None:
        vkeys = src.vertex_keys(sample)
    free = np.ones(n, dtype=bool) if active is None else np.array(active, dtype=bool, copy=True)
    free[root] = False
    box = lat.index_of(pos) if lat is not None else None
    support = g.support_radius if lat is None else math.inf
    order = [int(root)]
    head = 0
    while head < len(order):
        if cap is not None and len(order) >= cap:
            break
        v = order[head]
        head += 1
        cand = np.nonzero(free)[0]
        if not len(cand):
            break
        if lat is None:
            dist = np.linalg.norm(pos[cand] - pos[v], axis=1)
            if math.isfinite(support):
                near = dist <= support
                cand, dist = cand[near], dist[near]
            gv = g.profile(dist)
        else:
            gv = g_hat_indices(g, lat, box[cand], box[v])
        live = gv > 0
        cand, gv = cand[live], gv[live]
        if not len(cand):
            continue
        u = src.pairs(vkeys, np.full(len(cand), v), cand)
        new = cand[u <= gv]
        free[new] = False
        order.extend(int(x) for x in new)
    censored = cap is not None and len(order) >= cap
    if censored:
        order = order[:cap]
    return ClusterResult(tuple(order), censored)


def write_graph_csv(directory: str | Path, sample: PointSample, graph: RcmGraph,
                    site=None, ghost=None) -> None:
    """points.csv (id,x1..xd), edges.csv (id_a,id_b) and, optionally, states.csv bitstrings."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "points.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"x{a + 1}" for a in range(sample.d)])
        for v in graph.vertices:
            w.writerow([int(v)] + [repr(float(c)) for c in sample.positions[v]])
    with open(directory / "edges.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id_a", "id_b"])
        for a, b in graph.edges:
            w.writerow([int(a), int(b)])
    if site is not None or ghost is not None:
        ids = [int(v) for v in graph.vertices]
        with open(directory / "states.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["field", "parameter", "bits"])
            w.writerow(["vertex_ids", "", " ".join(map(str, ids))])
            if site is not None:
                w.writerow(["open", repr(site.p), "".join("1" if site.open[v] else "0" for v in ids)])
            if ghost is not None:
                w.writerow(["green", repr(ghost.h), "".join("1" if ghost.green[v] else "0" for v in ids)])
