"""Radial connection functions, their cut-off and box-supremum forms, and the box lattice."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy import integrate, special

__all__ = [
    "ConnectionFunction",
    "BoxLattice",
    "indicator",
    "exponential",
    "power_law",
    "table",
    "read_table_csv",
    "from_spec",
    "evaluate",
    "cutoff",
    "g_hat",
    "integral",
    "tail_integral",
    "assign_box",
    "unit_ball_volume",
]

FAMILIES = ("indicator", "exponential", "power-law", "custom-table")
QUAD_RTOL = 1e-8


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True)
class ConnectionFunction:
    """A radial, non-increasing edge-probability profile on R^d.

    ``params`` holds the family parameters as a tuple of (name, value) pairs so
    instances stay hashable; ``cut`` is an optional truncation radius applied on
    top of the family profile.
    """

    family: str
    params: tuple
    dimension: int
    cut: float | None = None
    _table: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown connection family {self.family!r}")
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dimension}")
        p = self.param
        if self.family == "indicator" and not p("radius") > 0:
            raise ValueError("indicator radius must be positive")
        if self.family == "exponential" and not p("scale") > 0:
            raise ValueError("exponential scale must be positive")
        if self.family == "power-law" and not p("alpha") > self.dimension:
            raise ValueError(
                f"power-law exponent alpha={p('alpha')} must exceed dimension {self.dimension} "
                "(otherwise the integral diverges)"
            )
        if self.cut is not None and not self.cut > 0:
            raise ValueError("cutoff radius must be positive")

    def param(self, name: str) -> float:
        return dict(self.params)[name]

    @property
    def base_support(self) -> float:
        if self.family == "indicator":
            return float(self.param("radius"))
        if self.family == "custom-table":
            radii, values = self._table
            zero = np.nonzero(np.asarray(values) == 0.0)[0]
            return float(radii[zero[0]])
        return math.inf

    @property
    def support_radius(self) -> float:
        if self.cut is None:
            return self.base_support
        return min(self.cut, self.base_support)

    def profile(self, r):
        """Edge probability at distance(s) ``r``; vectorised over numpy arrays."""
        r = np.asarray(r, dtype=np.float64)
        fam = self.family
        if fam == "indicator":
            out = (r <= self.param("radius")).astype(np.float64)
        elif fam == "exponential":
            out = np.exp(-r / self.param("scale"))
        elif fam == "power-law":
            with np.errstate(divide="ignore", over="ignore"):
                out = np.minimum(1.0, np.power(np.maximum(r, 0.0), -self.param("alpha")))
        else:
            radii, values = self._table
            out = np.interp(r, radii, values, left=values[0], right=0.0)
        if self.cut is not None:
            out = np.where(r <= self.cut, out, 0.0)
        return out if out.ndim else float(out)

    def __call__(self, x):
        return evaluate(self, x)

    def describe(self) -> dict[str, Any]:
        spec: dict[str, Any] = {"family": self.family, "dimension": self.dimension}
        if self.family == "custom-table":
            spec["radii"] = list(self._table[0])
            spec["values"] = list(self._table[1])
        else:
            spec.update(dict(self.params))
        if self.cut is not None:
            spec["cutoff"] = self.cut
        return spec


def indicator(radius: float = 1.0, d: int = 2) -> ConnectionFunction:
    return ConnectionFunction("indicator", (("radius", float(radius)),), d)


def exponential(scale: float = 1.0, d: int = 2) -> ConnectionFunction:
    """Profile exp(-r / scale)."""
    return ConnectionFunction("exponential", (("scale", float(scale)),), d)


def power_law(alpha: float, d: int = 2) -> ConnectionFunction:
    """Truncated power law min(1, r^-alpha); requires alpha > d."""
    return ConnectionFunction("power-law", (("alpha", float(alpha)),), d)


def table(radii, values, d: int = 2) -> ConnectionFunction:
    """Piecewise-linear profile through (radius, value) rows.

    Rows must have strictly increasing radii starting at 0, non-increasing values
    in [0, 1], and a final value of 0.
    """
    radii = tuple(float(r) for r in radii)
    values = tuple(float(v) for v in values)
    if len(radii) != len(values) or len(radii) < 2:
        raise ValueError("table needs at least two (radius, value) rows")
    if radii[0] != 0.0:
        raise ValueError("table must start at radius 0")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("table radii must be strictly increasing")
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise ValueError("table values must lie in [0, 1]")
    if any(b > a for a, b in zip(values, values[1:])):
        raise ValueError("table values must be non-increasing")
    if values[-1] != 0.0:
        raise ValueError("table must end with value 0")
    if values[0] == 0.0:
        raise ValueError("table profile is identically zero")
    return ConnectionFunction("custom-table", (), d, None, (radii, values))


def read_table_csv(path: str | Path, d: int) -> ConnectionFunction:
    radii, values = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                r, v = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if lineno == 1:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: expected 'radius,value'") from None
            radii.append(r)
            values.append(v)
    return table(radii, values, d)


def from_spec(spec: Mapping[str, Any]) -> ConnectionFunction:
    """Build from a config mapping such as ``{"family": "indicator", "radius": 1, "dimension": 2}``."""
    spec = dict(spec)
    family = spec.pop("family", None)
    d = int(spec.pop("dimension", 2))
    cut = spec.pop("cutoff", None)
    allowed = {
        "indicator": {"radius"},
        "exponential": {"scale"},
        "power-law": {"alpha"},
        "custom-table": {"radii", "values", "path"},
    }
    if family not in allowed:
        raise ValueError(f"connection.family must be one of {sorted(allowed)}, got {family!r}")
    unknown = set(spec) - allowed[family]
    if unknown:
        raise ValueError(f"unknown connection keys for {family}: {sorted(unknown)}")
    if family == "indicator":
        g = indicator(spec.get("radius", 1.0), d)
    elif family == "exponential":
        g = exponential(spec.get("scale", 1.0), d)
    elif family == "power-law":
        if "alpha" not in spec:
            raise ValueError("power-law connection needs 'alpha'")
        g = power_law(spec["alpha"], d)
    elif "path" in spec:
        g = read_table_csv(spec["path"], d)
    else:
        g = table(spec.get("radii", ()), spec.get("values", ()), d)
    return cutoff(g, cut) if cut is not None else g


def evaluate(g: ConnectionFunction, x) -> float | np.ndarray:
    """g at displacement(s) ``x`` (last axis of length d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (g.dimension,):
        raise ValueError(f"expected points of dimension {g.dimension}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("point coordinates must be finite")
    return g.profile(np.linalg.norm(x, axis=-1))


def cutoff(g: ConnectionFunction, R: float) -> ConnectionFunction:
    """g(x) 1(|x| <= R)."""
    if not R > 0:
        raise ValueError(f"cutoff radius must be positive, got {R}")
    R = float(R)
    if g.cut is not None:
        R = min(R, g.cut)
    if R >= g.base_support:
        return replace(g, cut=None) if g.cut is None else g
    if g.family == "indicator":
        return indicator(R, g.dimension)
    return replace(g, cut=R)


def _radial_integral(g: ConnectionFunction, upper: float) -> float:
    """d * theta_d * int_0^upper r^(d-1) profile(r) dr."""
    d = g.dimension
    area = d * unit_ball_volume(d)
    fam = g.family
    if fam == "indicator":
        return unit_ball_volume(d) * min(upper, g.param("radius")) ** d
    if fam == "exponential":
        beta = g.param("scale")
        if math.isinf(upper):
            return area * math.gamma(d) * beta**d
        return area * math.gamma(d) * beta**d * special.gammainc(d, upper / beta)
    if fam == "power-law":
        a = g.param("alpha")
        if upper <= 1.0:
            return unit_ball_volume(d) * upper**d
        tail = 0.0 if math.isinf(upper) else upper ** (d - a)
        return unit_ball_volume(d) + area * (1.0 - tail) / (a - d)
    radii, _ = g._table
    top = min(upper, g.base_support)
    pts = [r for r in radii if 0 < r < top]
    val, _ = integrate.quad(
        lambda r: r ** (d - 1) * g.profile(r), 0.0, top, points=pts or None,
        epsrel=QUAD_RTOL, epsabs=0.0, limit=200,
    )
    return area * val


def integral(g: ConnectionFunction) -> float:
    """Integral of g over R^d (closed form for built-in families)."""
    upper = g.cut if g.cut is not None else math.inf
    return _radial_integral(g, upper)


def tail_integral(g: ConnectionFunction, R: float) -> float:
    """Integral of g over {|x| > R}."""
    if g.family == "power-law" and g.cut is None and R >= 1.0:
        d, a = g.dimension, g.param("alpha")
        return d * unit_ball_volume(d) * R ** (d - a) / (a - d)
    return max(integral(g) - integral(cutoff(g, R)), 0.0)


@dataclass(frozen=True)
class BoxLattice:
    """Partition of the window [-K/2, K/2)^d into (K/s)^d boxes of side s."""

    K: float
    s: float
    d: int

    def __post_init__(self):
        if not (self.K > 0 and self.s > 0):
            raise ValueError("K and s must be positive")
        ratio = self.K / self.s
        m = round(ratio)
        if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"K/s must be a positive integer, got {ratio}")

    @property
    def per_axis(self) -> int:
        return round(self.K / self.s)

    @property
    def axis_centers(self) -> np.ndarray:
        return -self.K / 2 + self.s * (np.arange(self.per_axis) + 0.5)

    @property
    def n_boxes(self) -> int:
        return self.per_axis**self.d

    @property
    def centers(self) -> np.ndarray:
        """All box centers, shape (n_boxes, d), in lexicographic order."""
        ax = self.axis_centers
        return np.array(list(itertools.product(ax, repeat=self.d)), dtype=np.float64).reshape(-1, self.d)

    def center_index(self, c) -> np.ndarray:
        """Per-axis integer indices of a lattice center; rejects off-lattice input."""
        c = np.asarray(c, dtype=np.float64)
        if c.shape[-1:] != (self.d,):
            raise ValueError(f"center must have dimension {self.d}")
        raw = (c + self.K / 2) / self.s - 0.5
        idx = np.rint(raw)
        if np.any(np.abs(raw - idx) > 1e-9) or np.any(idx < 0) or np.any(idx >= self.per_axis):
            raise ValueError(f"{c.tolist()} is not a center of the lattice")
        return idx.astype(np.int64)

    def index_of(self, x) -> np.ndarray:
        """Per-axis box indices for point(s) x in the window."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (self.d,):
            raise ValueError(f"points must have dimension {self.d}")
        half = self.K / 2
        if np.any(x < -half) or np.any(x >= half):
            raise ValueError("point outside the lattice window")
        idx = np.floor((x + half) / self.s).astype(np.int64)
        return np.clip(idx, 0, self.per_axis - 1)

    def flat(self, idx) -> np.ndarray:
        """Row-major flattening (first axis most significant = lexicographic order)."""
        idx = np.asarray(idx, dtype=np.int64)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), (self.per_axis,) * self.d)

    def center_of(self, idx) -> np.ndarray:
        return -self.K / 2 + self.s * (np.asarray(idx, dtype=np.float64) + 0.5)


def assign_box(x, lat: BoxLattice) -> np.ndarray:
    """The center of the unique box containing x."""
    return lat.center_of(lat.index_of(x))


def box_gap(lat: BoxLattice, ia, ib) -> np.ndarray:
    """Minimum distance between closed boxes given per-axis index arrays."""
    diff = np.abs(np.asarray(ia, dtype=np.int64) - np.asarray(ib, dtype=np.int64))
    gap = np.maximum(diff - 1, 0) * lat.s
    return np.sqrt(np.sum(gap.astype(np.float64) ** 2, axis=-1))


def g_hat_indices(g: ConnectionFunction, lat: BoxLattice, ia, ib):
    """Box-supremum of g for per-axis index arrays (vectorised)."""
    return g.profile(box_gap(lat, ia, ib))


def g_hat(g: ConnectionFunction, lat: BoxLattice, xhat, yhat) -> float:
    """sup of g(p - q) over p in the box at xhat and q in the box at yhat."""
    if g.dimension != lat.d:
        raise ValueError("connection function and lattice dimensions differ")
    return float(g_hat_indices(g, lat, lat.center_index(xhat), lat.center_index(yhat)))
