"""Monte Carlo estimates, confidence intervals and least-squares fits."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

__all__ = ["Estimate", "DecayFit", "LinearFit", "fit_decay", "fit_linear", "run_reps", "ci_ordered_nonincreasing"]

Z95 = float(stats.norm.ppf(0.975))


@dataclass(frozen=True)
class Estimate:
    value: float
    n_samples: int
    stderr: float
    ci_lo: float
    ci_hi: float

    @classmethod
    def proportion(cls, successes: int, n: int) -> "Estimate":
        """Sample proportion with a Wilson score interval."""
        if n <= 0:
            raise ValueError("need at least one sample")
        p = successes / n
        z2 = Z95**2
        centre = (p + z2 / (2 * n)) / (1 + z2 / n)
        half = Z95 * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n)
        lo, hi = max(0.0, centre - half), min(1.0, centre + half)
        # the Wilson interval always covers p up to rounding
        return cls(p, n, math.sqrt(p * (1 - p) / n), min(lo, p), max(hi, p))

    @classmethod
    def exact(cls, value: float, n: int) -> "Estimate":
        """A value that is certain by construction (zero-width interval)."""
        return cls(float(value), int(n), 0.0, float(value), float(value))

    @classmethod
    def mean(cls, samples) -> "Estimate":
        x = np.asarray(samples, dtype=np.float64)
        se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
        m = float(x.mean())
        return cls(m, len(x), se, m - Z95 * se, m + Z95 * se)

    def as_dict(self) -> dict:
        return asdict(self)


def ci_ordered_nonincreasing(seq: Sequence[Estimate]) -> bool:
    """Each estimate is <= its predecessor, or their intervals overlap."""
    return all(b.value <= a.value or b.ci_lo <= a.ci_hi for a, b in zip(seq, seq[1:]))


@dataclass(frozen=True)
class DecayFit:
    rate: float
    prefactor: float
    r2: float
    n_range: tuple
    rate_stderr: float
    rate_ci: tuple


def _wls(x, y, w):
    X = np.column_stack([np.ones_like(x), x])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    resid = y - X @ coef
    ybar = np.sum(w * y) / np.sum(w)
    ss_res = float(np.sum(w * resid**2))
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = len(x) - 2
    sigma2 = ss_res / dof if dof > 0 else 0.0
    return coef, np.linalg.inv(X.T @ (X * w[:, None])), sigma2, r2, dof


def fit_decay(estimates: Mapping[int, Estimate]) -> DecayFit:
    """Weighted least squares of log(psi_n) on n; returns psi_n ~ C exp(-c n).

    Weights are the inverse delta-method variances (stderr / value)^2 of the
    log estimates; when any of those is zero the fit is unweighted.
    """
    pts = sorted((int(n), e) for n, e in estimates.items() if e.value > 0)
    if len(pts) < 4:
        raise ValueError("fit_decay needs at least 4 strictly positive estimates")
    n = np.array([p[0] for p in pts], dtype=np.float64)
    y = np.log([p[1].value for p in pts])
    var = np.array([(p[1].stderr / p[1].value) ** 2 for p in pts])
    w = np.ones_like(var) if np.any(var <= 0) else 1.0 / var
    coef, xtwx_inv, sigma2, r2, dof = _wls(n, y, w)
    cov = xtwx_inv * sigma2
    se = math.sqrt(max(cov[1, 1], 0.0))
    t = float(stats.t.ppf(0.975, dof)) if dof > 0 else math.inf
    rate = -float(coef[1])
    return DecayFit(rate, math.exp(float(coef[0])), r2, (int(n[0]), int(n[-1])), se, (rate - t * se, rate + t * se))


@dataclass(frozen=True)
class LinearFit:
    intercept: float
    slope: float
    intercept_stderr: float
    slope_stderr: float
    intercept_ci: tuple
    slope_ci: tuple


def fit_linear(xs: Sequence[float], estimates: Sequence[Estimate]) -> LinearFit:
    """Weighted fit value = a + b x with inverse-variance weights (95% t intervals)."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.array([e.value for e in estimates])
    var = np.array([e.stderr**2 for e in estimates])
    w = np.ones_like(var) if np.any(var <= 0) else 1.0 / var
    coef, xtwx_inv, sigma2, _, dof = _wls(x, y, w)
    # with real variances as weights, a residual scale below 1 would overstate precision
    cov = xtwx_inv * (max(1.0, sigma2) if np.all(var > 0) else sigma2)
    t = float(stats.t.ppf(0.975, dof)) if dof > 0 else math.inf
    sa, sb = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    a, b = float(coef[0]), float(coef[1])
    return LinearFit(a, b, sa, sb, (a - t * sa, a + t * sa), (b - t * sb, b + t * sb))


def _chunk_call(args):
    fn, start, stop = args
    return [fn(r) for r in range(start, stop)]


def run_reps(fn: Callable[[int], object], reps: int, threads: int = 1) -> list:
    """[fn(0), ..., fn(reps-1)], optionally across worker processes.

    Each replication owns its seed (derived from its index), so the output does
    not depend on ``threads``.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    if threads <= 1 or reps < 2 * threads:
        return [fn(r) for r in range(reps)]
    n_chunks = threads * 4
    bounds = np.linspace(0, reps, n_chunks + 1).astype(int)
    jobs = [(fn, int(a), int(b)) for a, b in zip(bounds, bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(_chunk_call, jobs))
    return [x for part in parts for x in part]
