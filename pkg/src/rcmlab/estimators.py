"""Seeded Monte Carlo estimators and the experiments built on them.

Every replication draws its own seeds from ``(master seed, stream, index)``,
so results are reproducible bit-for-bit and independent of ``threads``.
Estimators that share a stream name under the same master seed are coupled
through common random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np
from scipy import integrate

from .connection import BoxLattice, ConnectionFunction, cutoff, g_hat_indices, tail_integral
from .percolation import green_reach_all, thinning_construction
from .rng import derive_seed, keyed_uniform, rep_seeds
from .sampler import PairUniformSource, add_root, build_graph, explore_cluster, lazy_cluster, sample_poisson
from .stats import Estimate, fit_decay, fit_linear, run_reps

__all__ = [
    "MAX_POINTS",
    "estimate_psi",
    "fit_decay",
    "estimate_mh",
    "estimate_mhat",
    "estimate_coupling_disagreement",
    "estimate_cutoff_discrepancy",
    "verify_theorem2",
    "Theorem2Report",
    "transitivity_experiment",
    "TransitivitySummary",
    "r_event_frequency",
    "mecke_edge_check",
    "cluster_size_counts",
    "mecke_reference",
]

MAX_POINTS = 200_000
_TAG_GHOST = 0x4D485F47484F5354


def _check_budget(intensity: float, side: float, d: int, limit: int = MAX_POINTS):
    expected = intensity * side**d
    if expected > limit:
        raise ValueError(f"expected {expected:.0f} points per replication exceeds the budget of {limit}")


def _rooted_sample(intensity, side, d, seed):
    return add_root(sample_poisson(intensity, side, d, seed))


# --- cluster tail -----------------------------------------------------------


def _psi_rep(g, intensity, side, cap, master, r):
    s_pts, s_pair, _ = rep_seeds(master, "psi", r)
    sample = _rooted_sample(intensity, side, g.dimension, s_pts)
    return lazy_cluster(sample, g, PairUniformSource(s_pair), sample.root, cap=cap).size


def estimate_psi(g: ConnectionFunction, intensity: float, n_values: Sequence[int], side: float,
                 reps: int, seed: int, threads: int = 1) -> dict[int, Estimate]:
    """P(|C0| >= n) in the window [-side/2, side/2)^d with the origin added as root."""
    if reps < 100:
        raise ValueError("estimate_psi needs reps >= 100")
    if not side > 0:
        raise ValueError("window side must be positive")
    _check_budget(intensity, side, g.dimension)
    n_values = sorted({int(n) for n in n_values})
    cap = max(max(n_values), 1)
    sizes = np.array(run_reps(partial(_psi_rep, g, intensity, side, cap, seed), reps, threads))
    out = {}
    for n in n_values:
        out[n] = Estimate.exact(1.0, reps) if n <= 1 else Estimate.proportion(int(np.sum(sizes >= n)), reps)
    return out


# --- ghost intersection -----------------------------------------------------


def _mh_rep(g, intensity, side, q, lat, master, r):
    s_pts, s_pair, s_ghost = rep_seeds(master, "mh", r)
    sample = _rooted_sample(intensity, side, g.dimension, s_pts)
    cl = lazy_cluster(sample, g, PairUniformSource(s_pair), sample.root, lat=lat)
    keys = sample.keys[list(cl.vertices)]
    return bool(np.any(keyed_uniform(s_ghost, _TAG_GHOST, keys) < q))


def estimate_mh(g: ConnectionFunction, intensity: float, h: float, side: float, reps: int, seed: int,
                threads: int = 1) -> Estimate:
    """P(C0 meets the ghost field) in the window of the given side.

    Ghost marks are keyed per point, so runs with the same seed and different h
    are monotonically coupled.
    """
    if not h >= 0:
        raise ValueError("h must be non-negative")
    _check_budget(intensity, side, g.dimension)
    if h == 0:
        return Estimate.exact(0.0, reps)
    q = -math.expm1(-h)
    hits = run_reps(partial(_mh_rep, g, intensity, side, q, None, seed), reps, threads)
    return Estimate.proportion(int(sum(hits)), reps)


def estimate_mhat(g: ConnectionFunction, intensity: float, h: float, K: float, s: float, reps: int,
                  seed: int, threads: int = 1) -> Estimate:
    """As estimate_mh in the window of side K, with edges drawn against the box supremum.

    Shares its random stream with ``estimate_mh(..., side=K, seed=seed)``, so the
    two estimates are coupled and this one is never smaller.
    """
    lat = BoxLattice(K, s, g.dimension)
    if not h >= 0:
        raise ValueError("h must be non-negative")
    _check_budget(intensity, K, g.dimension)
    if h == 0:
        return Estimate.exact(0.0, reps)
    q = -math.expm1(-h)
    hits = run_reps(partial(_mh_rep, g, intensity, K, q, lat, seed), reps, threads)
    return Estimate.proportion(int(sum(hits)), reps)


# --- discretisation coupling ------------------------------------------------


def _coupling_rep(g, intensity, K, lats, master, r):
    s_pts, s_pair, _ = rep_seeds(master, "coupling", r)
    sample = _rooted_sample(intensity, K, g.dimension, s_pts)
    i, j = np.triu_indices(sample.n, 1)
    if not len(i):
        return [False] * len(lats)
    pos = sample.positions
    src = PairUniformSource(s_pair)
    u = src.pairs(sample.keys, i, j)
    gv = g.profile(np.linalg.norm(pos[i] - pos[j], axis=1))
    out = []
    for lat in lats:
        box = lat.index_of(pos)
        gh = g_hat_indices(g, lat, box[i], box[j])
        out.append(bool(np.any((u > gv) & (u <= gh))))
    return out


@dataclass(frozen=True)
class CouplingReport:
    estimates: dict  # s -> Estimate
    fit: object  # LinearFit of disagreement probability against s, or None


def estimate_coupling_disagreement(g: ConnectionFunction, intensity: float, K: float, s_values: Sequence[float],
                                   reps: int, seed: int, threads: int = 1) -> CouplingReport:
    """P(box-supremum graph != G_g) on the rooted sample in [-K/2, K/2)^d, per s.

    All s share the same samples and uniforms.
    """
    lats = [BoxLattice(K, s, g.dimension) for s in s_values]
    _check_budget(intensity, K, g.dimension, limit=20_000)
    flags = np.array(run_reps(partial(_coupling_rep, g, intensity, K, lats, seed), reps, threads), dtype=bool)
    est = {float(s): Estimate.proportion(int(flags[:, k].sum()), reps) for k, s in enumerate(s_values)}
    fit = fit_linear(list(est), list(est.values())) if len(est) >= 3 else None
    return CouplingReport(est, fit)


# --- radius cut-off ---------------------------------------------------------


def _escapes(sample, g, src, cluster) -> bool:
    """Some vertex of ``cluster`` has a G_g edge to a vertex outside it."""
    inside = np.zeros(sample.n, dtype=bool)
    inside[list(cluster)] = True
    out = np.nonzero(~inside)[0]
    if not len(out):
        return False
    pos = sample.positions
    for v in cluster:
        gv = g.profile(np.linalg.norm(pos[out] - pos[v], axis=1))
        live = gv > 0
        cand = out[live]
        if len(cand) and np.any(src.pairs(sample.keys, np.full(len(cand), v), cand) <= gv[live]):
            return True
    return False


def _cutoff_rep(g, intensity, side, radii, ks, master, r):
    s_pts, s_pair, _ = rep_seeds(master, "cutoff", r)
    sample = _rooted_sample(intensity, side, g.dimension, s_pts)
    src = PairUniformSource(s_pair)
    cap = max(ks) + 1
    row = []
    for R in radii:
        cl = lazy_cluster(sample, cutoff(g, R), src, sample.root, cap=cap)
        size = None if cl.censored else cl.size
        hit = size in ks and _escapes(sample, g, src, cl.vertices)
        row.append([hit and size == k for k in ks])
    return row


def estimate_cutoff_discrepancy(g: ConnectionFunction, intensity: float, radii: Sequence[float], ks: Sequence[int],
                                side: float, reps: int, seed: int, threads: int = 1) -> dict:
    """P(|C0^R| = k and C0 != C0^R) for each (R, k), coupled across R and k.

    Returns ``{(R, k): Estimate}`` plus, under key ``("bound", R)``, the value
    intensity * integral of g outside the ball of radius R.
    """
    ks = [int(k) for k in ks]
    if min(ks) < 1:
        raise ValueError("cluster sizes k must be >= 1")
    _check_budget(intensity, side, g.dimension)
    flags = np.array(run_reps(partial(_cutoff_rep, g, intensity, side, list(radii), ks, seed), reps, threads),
                     dtype=bool)
    out: dict = {}
    for a, R in enumerate(radii):
        for b, k in enumerate(ks):
            out[(float(R), k)] = Estimate.proportion(int(flags[:, a, b].sum()), reps)
        out[("bound", float(R))] = intensity * tail_integral(g, R)
    return out


# --- intensity-reduction inequality ---------------------------------------


@dataclass(frozen=True)
class Theorem2Report:
    intensity: float
    h: float
    side: float
    mh: Estimate
    reduced_intensity: float
    rows: list  # dicts with n, lhs, rhs, lhs_se, rhs_se, margin, pass
    inconclusive: bool

    @property
    def passed(self) -> bool:
        return not self.inconclusive and all(r["pass"] for r in self.rows)


def verify_theorem2(g: ConnectionFunction, intensity: float, h: float, n_max: int, reps: int, seed: int,
                    side: float | None = None, threads: int = 1, tolerance_sigma: float = 3.0) -> Theorem2Report:
    """Compare psi_n(lambda') with psi_n(lambda) e^{-hn} / (1 - m_h(lambda)), lambda' = lambda (1 - m_h).

    The three estimates use independent streams.  ``margin`` is
    (RHS - LHS) / combined stderr; a row passes when margin >= -tolerance_sigma.
    With h = 0 rows pass when |LHS - RHS| is within tolerance (both sides estimate psi_n).
    """
    R = g.support_radius
    if not math.isfinite(R):
        raise ValueError("verify_theorem2 needs a connection function with bounded support")
    side = float(side if side is not None else n_max * R)
    if side < n_max * R:
        raise ValueError(f"window side {side} is smaller than n_max * R = {n_max * R}")
    ns = list(range(1, n_max + 1))
    mh = estimate_mh(g, intensity, h, side, reps, derive_seed(seed, "thm2", "mh"), threads)
    inconclusive = mh.ci_hi >= 1.0
    lam_p = intensity * (1.0 - mh.value)
    psi = estimate_psi(g, intensity, ns, side, reps, derive_seed(seed, "thm2", "psi"), threads)
    if lam_p > 0:
        psi_p = estimate_psi(g, lam_p, ns, side, reps, derive_seed(seed, "thm2", "psi-reduced"), threads)
    else:
        psi_p = {n: Estimate.exact(1.0 if n <= 1 else 0.0, reps) for n in ns}
    rows = []
    for n in ns:
        lhs = psi_p[n]
        a = psi[n]
        damp = math.exp(-h * n)
        one_m = 1.0 - mh.value
        rhs = a.value * damp / one_m if one_m > 0 else math.inf
        rhs_se = damp * math.sqrt((a.stderr / one_m) ** 2 + (a.value * mh.stderr / one_m**2) ** 2) if one_m > 0 else math.inf
        se = math.hypot(lhs.stderr, rhs_se)
        diff = rhs - lhs.value
        margin = diff / se if se > 0 else (math.inf if diff >= 0 else -math.inf)
        if h == 0:
            ok = abs(diff) <= tolerance_sigma * se or abs(diff) < 1e-15
        else:
            ok = margin >= -tolerance_sigma
        rows.append(dict(n=n, lhs=lhs.value, rhs=rhs, lhs_se=lhs.stderr, rhs_se=rhs_se, margin=margin, **{"pass": bool(ok)}))
    return Theorem2Report(intensity, h, side, mh, lam_p, rows, inconclusive)


# --- asymptotic transitivity ------------------------------------------------


def _transitivity_rep(g, intensity, h, K, N, inner, max_vertices, master, r):
    s_pts, s_pair, s_inner = rep_seeds(master, f"transitivity-N{N}", r)
    sample = _rooted_sample(N * intensity, K, g.dimension, s_pts)
    strategy = "cell-list" if math.isfinite(g.support_radius) else "dense"
    adj = build_graph(sample, g, PairUniformSource(s_pair), strategy).adjacency.tocsr()
    rng = np.random.default_rng(s_inner)
    n = sample.n
    chosen = np.sort(rng.permutation(n)[:max_vertices]) if n > max_vertices else np.arange(n)
    q = -math.expm1(-h)
    counts = np.zeros(len(chosen), dtype=np.int64)
    for _ in range(inner):
        # the graph is G(omega_N + {x}): the root is a candidate x but never an interior vertex
        open_mask = rng.random(n) < 1.0 / N
        open_mask[sample.root] = False
        green = rng.random(n) < q
        counts += green_reach_all(adj, open_mask, green)[chosen]
    probs = counts / inner
    return float(probs.max()), float(probs.min()), float(np.median(probs))


@dataclass(frozen=True)
class TransitivitySummary:
    N: int
    maxima: np.ndarray  # max over sampled vertices, one per outer replication
    minima: np.ndarray
    median: float
    q25: float
    q75: float


def transitivity_experiment(g: ConnectionFunction, intensity: float, h: float, K: float, N_values: Sequence[int],
                            outer_reps: int, inner_reps: int, seed: int, max_vertices: int = 200,
                            reference_reps: int = 20_000, reference_side: float | None = None,
                            threads: int = 1):
    """Distribution over intensity-(N lambda) samples of the largest per-vertex probability
    of being joined to a green vertex through open vertices (site parameter 1/N).

    Returns ``(summaries, reference)`` where ``reference`` estimates m_h(lambda)
    in a window of side ``reference_side`` (default 2K).
    """
    N_values = [int(N) for N in N_values]
    if any(N < 1 for N in N_values) or N_values != sorted(N_values):
        raise ValueError("N_values must be ascending positive integers")
    _check_budget(max(N_values) * intensity, K, g.dimension, limit=20_000)
    out = []
    for N in N_values:
        if h == 0:
            z = np.zeros(outer_reps)
            out.append(TransitivitySummary(N, z, z, 0.0, 0.0, 0.0))
            continue
        res = np.array(run_reps(partial(_transitivity_rep, g, intensity, h, K, N, inner_reps, max_vertices,
                                        derive_seed(seed, "transitivity")), outer_reps, threads))
        mx = res[:, 0]
        out.append(TransitivitySummary(N, mx, res[:, 1], float(np.median(mx)),
                                       float(np.quantile(mx, 0.25)), float(np.quantile(mx, 0.75))))
    ref_side = reference_side if reference_side is not None else 2 * K
    ref = estimate_mh(g, intensity, h, ref_side, reference_reps, derive_seed(seed, "transitivity", "mh"), threads)
    return out, ref


# --- box-count concentration ------------------------------------------------


def _r_event_rep(intensity, lat, alpha, N, master, r):
    (s_pts,) = rep_seeds(master, "r-event", r, 1)
    pts = sample_poisson(N * intensity, lat.K, lat.d, s_pts).positions
    counts = np.bincount(lat.flat(lat.index_of(pts)), minlength=lat.n_boxes)
    mean = intensity * lat.s**lat.d * N
    return bool(np.all(((1 - alpha) * mean < counts) & (counts < (1 + alpha) * mean)))


def r_event_frequency(intensity: float, K: float, s: float, alpha: float, N: int, reps: int, seed: int,
                      d: int = 2, threads: int = 1):
    """Frequency of every box count lying strictly within (1 -/+ alpha) times its mean.

    Returns ``(Estimate, bound)`` with the large-deviation lower bound.
    """
    from .exact import ldp_bound_eval

    lat = BoxLattice(K, s, d)
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 1/2)")
    _check_budget(N * intensity, K, d, limit=2_000_000)
    hits = run_reps(partial(_r_event_rep, intensity, lat, alpha, N, seed), reps, threads)
    return Estimate.proportion(int(sum(hits)), reps), ldp_bound_eval(intensity, s, alpha, K, N, d)


# --- edge-count identity ----------------------------------------------------


def _breakpoints(g: ConnectionFunction) -> list[float]:
    pts = []
    if g.family == "indicator":
        pts.append(g.param("radius"))
    elif g.family == "power-law":
        pts.append(1.0)
    elif g.family == "custom-table":
        pts.extend(g._table[0][1:])
    if g.cut is not None:
        pts.append(g.cut)
    return sorted(set(p for p in pts if p > 0))


def mecke_reference(g: ConnectionFunction, intensity: float, side: float) -> float:
    """(intensity^2 / 2) times the double integral of g(x - y) over the window squared.

    Uses int int g(x-y) dx dy = int g(z) prod_a (side - |z_a|)_+ dz, by quadrature.
    """
    d = g.dimension
    L = float(side)
    br = _breakpoints(g)
    opts = dict(epsrel=1e-10, epsabs=0.0, limit=400)
    if d == 1:
        pts = [b for b in br if b < L] or None
        val, _ = integrate.quad(lambda z: g.profile(z) * (L - z), 0.0, L, points=pts, **opts)
        total = 2.0 * val
    elif d == 2:
        def inner(a):
            pts = [math.sqrt(b * b - a * a) for b in br if a < b and b * b - a * a < L * L] or None
            v, _ = integrate.quad(lambda b: g.profile(math.hypot(a, b)) * (L - b), 0.0, L, points=pts, **opts)
            return v * (L - a)
        val, _ = integrate.quad(inner, 0.0, L, points=[b for b in br if b < L] or None, **opts)
        total = 4.0 * val
    else:
        raise ValueError("mecke_reference supports d <= 2")
    return 0.5 * intensity**2 * total


def _edge_count_rep(g, intensity, side, master, r):
    s_pts, s_pair, _ = rep_seeds(master, "mecke", r)
    sample = sample_poisson(intensity, side, g.dimension, s_pts)
    strategy = "cell-list" if math.isfinite(g.support_radius) else "dense"
    return build_graph(sample, g, PairUniformSource(s_pair), strategy).n_edges


def mecke_edge_check(g: ConnectionFunction, intensity: float, side: float, reps: int, seed: int,
                     threads: int = 1) -> dict:
    """Mean edge count of G_g on a Poisson sample versus the quadrature reference."""
    _check_budget(intensity, side, g.dimension, limit=20_000)
    counts = run_reps(partial(_edge_count_rep, g, intensity, side, seed), reps, threads)
    est = Estimate.mean(counts)
    ref = mecke_reference(g, intensity, side)
    z = (est.value - ref) / est.stderr if est.stderr > 0 else (0.0 if est.value == ref else math.inf)
    return {"empirical_mean": est.value, "stderr": est.stderr, "reference": ref, "z": z, "reps": reps}


# --- thinning ---------------------------------------------------------------


def _size_rep(g, intensity, side, N, cap, master, r):
    if N is None:
        s_pts, s_pair, _ = rep_seeds(master, "sizes", r)
        sample = _rooted_sample(intensity, side, g.dimension, s_pts)
        return lazy_cluster(sample, g, PairUniformSource(s_pair), sample.root, cap=cap).size
    (s_rep,) = rep_seeds(master, "sizes-thinned", r, 1)
    sample, _, _, thinned = thinning_construction(intensity, N, g, side, s_rep)
    return explore_cluster(thinned, sample.root, cap).size


def cluster_size_counts(g: ConnectionFunction, intensity: float, side: float, reps: int, seed: int,
                        N: int | None = None, cap: int = 20, threads: int = 1) -> np.ndarray:
    """Histogram of min(|C0|, cap) over replications; index k counts size k (index 0 unused).

    With ``N`` the cluster is read off the thinned intensity-(N * intensity)
    graph, otherwise from a direct sample at ``intensity``.
    """
    if N is not None:
        _check_budget(N * intensity, side, g.dimension)
    sizes = run_reps(partial(_size_rep, g, intensity, side, N, cap, seed), reps, threads)
    return np.bincount(sizes, minlength=cap + 1)
