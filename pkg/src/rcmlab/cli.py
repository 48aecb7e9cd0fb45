"""Command-line experiment runner.

Each subcommand reads an optional JSON config (unknown keys are errors),
applies ``--seed``/``--reps`` overrides, validates everything before any
sampling, and writes ``results.csv``, ``manifest.json`` and ``summary.txt``
into the output directory.  A manifest is itself a valid config, so

    rcmlab estimate-psi --config out/manifest.json --out again

reproduces ``out/results.csv`` byte for byte.

Exit status: 0 on success, 2 on invalid configuration (nothing written),
1 when a verification subcommand finds its property violated.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from . import estimators as est
from . import exact
from .connection import BoxLattice, from_spec
from .rng import derive_seed
from .sampler import PairUniformSource, add_root, build_graph, sample_poisson, write_graph_csv

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_VALIDATION = 2
OUT_ENV = "RCMLAB_OUT"
DEFAULT_OUT = "rcmlab-out"

_INDICATOR = {"family": "indicator", "radius": 1.0, "dimension": 2}


class ConfigError(ValueError):
    pass


@dataclass
class RunResult:
    columns: list
    rows: list
    summary: list
    ok: bool = True
    extra: dict = field(default_factory=dict)  # file name -> writer(directory)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _est_row(e, **lead) -> dict:
    return {**lead, "value": e.value, "stderr": e.stderr, "ci_lo": e.ci_lo, "ci_hi": e.ci_hi, "reps": e.n_samples}


_EST_COLS = ["value", "stderr", "ci_lo", "ci_hi", "reps"]


# --- validation helpers -----------------------------------------------------


def _positive(cfg, *keys):
    for k in keys:
        v = cfg[k]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0 or not math.isfinite(v):
            raise ConfigError(f"{k}: must be a positive finite number, got {v!r}")


def _nonneg(cfg, *keys):
    for k in keys:
        v = cfg[k]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v >= 0 or not math.isfinite(v):
            raise ConfigError(f"{k}: must be a non-negative finite number, got {v!r}")


def _pos_int(cfg, *keys):
    for k in keys:
        v = cfg[k]
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"{k}: must be a positive integer, got {v!r}")


def _num_list(cfg, key, integer=False, positive=True):
    v = cfg[key]
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{key}: must be a non-empty list")
    for x in v:
        if isinstance(x, bool) or not isinstance(x, int if integer else (int, float)):
            raise ConfigError(f"{key}: entries must be {'integers' if integer else 'numbers'}, got {x!r}")
        if positive and not x > 0:
            raise ConfigError(f"{key}: entries must be positive, got {x!r}")


def _connection(cfg):
    try:
        return from_spec(cfg["connection"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"connection: {exc}") from None


def _lattice(K, s, d):
    try:
        return BoxLattice(K, s, d)
    except ValueError as exc:
        raise ConfigError(f"K, s: {exc}") from None


def _budget(intensity, side, d, limit=est.MAX_POINTS):
    if intensity * side**d > limit:
        raise ConfigError(f"expected {intensity * side**d:.0f} points per replication exceeds the budget of {limit}")


# --- subcommands ------------------------------------------------------------


def _run_sample(cfg, threads, out):
    g = _connection(cfg)
    _positive(cfg, "intensity", "side")
    _budget(cfg["intensity"], cfg["side"], g.dimension, 20_000 if not math.isfinite(g.support_radius) else est.MAX_POINTS)
    if not isinstance(cfg["root"], bool):
        raise ConfigError("root: must be true or false")

    def work():
        sample = sample_poisson(cfg["intensity"], cfg["side"], g.dimension, derive_seed(cfg["seed"], "points"))
        if cfg["root"]:
            sample = add_root(sample)
        strategy = "cell-list" if math.isfinite(g.support_radius) else "dense"
        graph = build_graph(sample, g, PairUniformSource(derive_seed(cfg["seed"], "pairs")), strategy)
        rows = [{"n_points": sample.n_points, "n_vertices": sample.n, "n_edges": graph.n_edges,
                 "mean_degree": 2 * graph.n_edges / sample.n if sample.n else 0.0}]
        summary = [f"{sample.n} vertices, {graph.n_edges} edges in a window of side {cfg['side']}"]
        return RunResult(list(rows[0]), rows, summary,
                         extra={"graph": lambda d: write_graph_csv(d, sample, graph)})

    return work


def _run_psi(cfg, threads, out):
    g = _connection(cfg)
    _positive(cfg, "intensity", "side")
    _pos_int(cfg, "reps")
    _num_list(cfg, "n_values", integer=True)
    if cfg["reps"] < 100:
        raise ConfigError("reps: estimate-psi needs at least 100")
    _budget(cfg["intensity"], cfg["side"], g.dimension)

    def work():
        res = est.estimate_psi(g, cfg["intensity"], cfg["n_values"], cfg["side"], cfg["reps"], cfg["seed"], threads)
        rows = [_est_row(e, n=n) for n, e in sorted(res.items())]
        summary = [f"psi_{n} = {e.value:.6g} +/- {e.stderr:.2g}" for n, e in sorted(res.items())]
        return RunResult(["n"] + _EST_COLS, rows, summary)

    return work


def _run_mh(cfg, threads, out):
    g = _connection(cfg)
    _positive(cfg, "intensity", "side")
    _nonneg(cfg, "h")
    _pos_int(cfg, "reps")
    _budget(cfg["intensity"], cfg["side"], g.dimension)

    def work():
        e = est.estimate_mh(g, cfg["intensity"], cfg["h"], cfg["side"], cfg["reps"], cfg["seed"], threads)
        return RunResult(["h"] + _EST_COLS, [_est_row(e, h=cfg["h"])], [f"m_h = {e.value:.6g} +/- {e.stderr:.2g}"])

    return work


def _run_mhat(cfg, threads, out):
    g = _connection(cfg)
    _positive(cfg, "intensity", "K", "s")
    _nonneg(cfg, "h")
    _pos_int(cfg, "reps")
    _lattice(cfg["K"], cfg["s"], g.dimension)
    _budget(cfg["intensity"], cfg["K"], g.dimension)

    def work():
        a = est.estimate_mhat(g, cfg["intensity"], cfg["h"], cfg["K"], cfg["s"], cfg["reps"], cfg["seed"], threads)
        b = est.estimate_mh(g, cfg["intensity"], cfg["h"], cfg["K"], cfg["reps"], cfg["seed"], threads)
        rows = [_est_row(a, quantity="mhat", s=cfg["s"]), _est_row(b, quantity="mh", s=cfg["s"])]
        summary = [f"box-supremum m_h = {a.value:.6g} +/- {a.stderr:.2g}",
                   f"coupled m_h = {b.value:.6g} +/- {b.stderr:.2g}"]
        return RunResult(["quantity", "s"] + _EST_COLS, rows, summary)

    return work


def _run_coupling(cfg, threads, out):
    g = _connection(cfg)
    _positive(cfg, "intensity", "K")
    _pos_int(cfg, "reps")
    _num_list(cfg, "s_values")
    for s in cfg["s_values"]:
        _lattice(cfg["K"], s, g.dimension)
    _budget(cfg["intensity"], cfg["K"], g.dimension, 20_000)

    def work():
        rep = est.estimate_coupling_disagreement(g, cfg["intensity"], cfg["K"], cfg["s_values"], cfg["reps"],
                                                 cfg["seed"], threads)
        rows = [_est_row(e, s=s) for s, e in rep.estimates.items()]
        summary = [f"P(disagree | s={s}) = {e.value:.6g} +/- {e.stderr:.2g}" for s, e in rep.estimates.items()]
        if rep.fit is not None:
            summary.append(f"linear fit: intercept {rep.fit.intercept:.4g} CI {rep.fit.intercept_ci}, "
                           f"slope {rep.fit.slope:.4g} CI {rep.fit.slope_ci}")
        return RunResult(["s"] + _EST_COLS, rows, summary)

    return work


def _run_cutoff(cfg, threads, out):
    g = _connection(cfg)
    _positive(cfg, "intensity", "side")
    _pos_int(cfg, "reps")
    _num_list(cfg, "radii")
    _num_list(cfg, "ks", integer=True)
    _budget(cfg["intensity"], cfg["side"], g.dimension, 20_000)

    def work():
        res = est.estimate_cutoff_discrepancy(g, cfg["intensity"], cfg["radii"], cfg["ks"], cfg["side"],
                                              cfg["reps"], cfg["seed"], threads)
        rows = []
        for R in cfg["radii"]:
            bound = res[("bound", float(R))]
            for k in cfg["ks"]:
                rows.append(_est_row(res[(float(R), k)], R=float(R), k=k) | {"tail_bound": bound})
        summary = [f"R={r['R']} k={r['k']}: {r['value']:.6g} +/- {r['stderr']:.2g} (tail bound {r['tail_bound']:.4g})"
                   for r in rows]
        return RunResult(["R", "k"] + _EST_COLS + ["tail_bound"], rows, summary)

    return work


def _run_theorem2(cfg, threads, out):
    g = _connection(cfg)
    _positive(cfg, "intensity", "tolerance_sigma")
    _nonneg(cfg, "h")
    _pos_int(cfg, "reps", "n_max")
    if not math.isfinite(g.support_radius):
        raise ConfigError("connection: verify-theorem2 needs bounded support")
    side = cfg["side"] if cfg["side"] is not None else cfg["n_max"] * g.support_radius
    if cfg["side"] is not None:
        _positive(cfg, "side")
        if side < cfg["n_max"] * g.support_radius:
            raise ConfigError(f"side: must be at least n_max * R = {cfg['n_max'] * g.support_radius}")
    _budget(cfg["intensity"], side, g.dimension)

    def work():
        rep = est.verify_theorem2(g, cfg["intensity"], cfg["h"], cfg["n_max"], cfg["reps"], cfg["seed"],
                                  side=side, threads=threads, tolerance_sigma=cfg["tolerance_sigma"])
        cols = ["n", "lhs", "rhs", "lhs_se", "rhs_se", "margin", "pass"]
        summary = [f"m_h = {rep.mh.value:.6g} +/- {rep.mh.stderr:.2g}; reduced intensity {rep.reduced_intensity:.6g}"]
        if rep.inconclusive:
            summary.append("INCONCLUSIVE: m_h interval reaches 1")
        summary += [f"n={r['n']}: LHS {r['lhs']:.6g} RHS {r['rhs']:.6g} margin {r['margin']:.3g} "
                    f"{'ok' if r['pass'] else 'FAIL'}" for r in rep.rows]
        return RunResult(cols, rep.rows, summary, ok=rep.passed)

    return work


def _read_rows(path, required) -> list[dict]:
    """Rows of a results CSV; malformed content raises with the line number."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"input: cannot read {path}: {exc.strerror}") from None
    lines = [(i, ln) for i, ln in enumerate(text.splitlines(), start=1) if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ConfigError(f"input: {path} is empty")
    header_line, header = lines[0][0], next(csv.reader([lines[0][1]]))
    missing = [c for c in required if c not in header]
    if missing:
        raise ConfigError(f"{path}:{header_line}: missing columns {missing}")
    rows = []
    for lineno, ln in lines[1:]:
        vals = next(csv.reader([ln]))
        if len(vals) != len(header):
            raise ConfigError(f"{path}:{lineno}: expected {len(header)} fields, got {len(vals)}")
        row = dict(zip(header, vals))
        for c in required:
            try:
                row[c] = float(row[c])
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: column {c!r} is not numeric: {row[c]!r}") from None
        rows.append(row)
    if not rows:
        raise ConfigError(f"input: {path} has no data rows")
    return rows


def _run_fit_decay(cfg, threads, out):
    if not isinstance(cfg["input"], str):
        raise ConfigError("input: path to an estimate-psi results.csv is required")
    _pos_int(cfg, "n_min", "n_max")
    rows = _read_rows(cfg["input"], ["n", "value", "stderr", "reps"])

    def work():
        from .stats import Estimate

        pts = {}
        for r in rows:
            n = int(r["n"])
            if cfg["n_min"] <= n <= cfg["n_max"] and r["value"] > cfg["min_count"] / r["reps"]:
                pts[n] = Estimate(r["value"], int(r["reps"]), r["stderr"], r["value"], r["value"])
        try:
            fit = est.fit_decay(pts)
        except ValueError as exc:
            raise ConfigError(f"input: {exc}") from None
        row = {"rate": fit.rate, "prefactor": fit.prefactor, "r2": fit.r2, "n_lo": fit.n_range[0],
               "n_hi": fit.n_range[1], "rate_stderr": fit.rate_stderr, "rate_ci_lo": fit.rate_ci[0],
               "rate_ci_hi": fit.rate_ci[1]}
        summary = [f"psi_n ~ {fit.prefactor:.4g} exp(-{fit.rate:.4g} n) over n in {fit.n_range}, R^2 = {fit.r2:.5f}"]
        return RunResult(list(row), [row], summary)

    return work


def _run_transitivity(cfg, threads, out):
    g = _connection(cfg)
    _positive(cfg, "intensity", "K")
    _nonneg(cfg, "h")
    _pos_int(cfg, "outer_reps", "inner_reps", "max_vertices", "reference_reps")
    _num_list(cfg, "N_values", integer=True)
    if cfg["N_values"] != sorted(set(cfg["N_values"])):
        raise ConfigError("N_values: must be strictly ascending")
    _budget(max(cfg["N_values"]) * cfg["intensity"], cfg["K"], g.dimension, 20_000)

    def work():
        summaries, ref = est.transitivity_experiment(
            g, cfg["intensity"], cfg["h"], cfg["K"], cfg["N_values"], cfg["outer_reps"], cfg["inner_reps"],
            cfg["seed"], max_vertices=cfg["max_vertices"], reference_reps=cfg["reference_reps"], threads=threads)
        rows = []
        for s in summaries:
            for i, (mx, mn) in enumerate(zip(s.maxima, s.minima)):
                rows.append({"N": s.N, "rep": i, "max_statistic": mx, "min_statistic": mn, "reference_mh": ref.value})
        summary = [f"reference m_h = {ref.value:.6g} +/- {ref.stderr:.2g}"]
        summary += [f"N={s.N}: median max {s.median:.4g} (quartiles {s.q25:.4g}, {s.q75:.4g})" for s in summaries]
        return RunResult(["N", "rep", "max_statistic", "min_statistic", "reference_mh"], rows, summary)

    return work


def _run_r_event(cfg, threads, out):
    _positive(cfg, "intensity", "K", "s", "alpha")
    _pos_int(cfg, "reps", "dimension")
    _num_list(cfg, "N_values", integer=True)
    if not 0 < cfg["alpha"] < 0.5:
        raise ConfigError("alpha: must lie in (0, 1/2)")
    _lattice(cfg["K"], cfg["s"], cfg["dimension"])
    _budget(max(cfg["N_values"]) * cfg["intensity"], cfg["K"], cfg["dimension"], 2_000_000)

    def work():
        rows, summary = [], []
        ok = True
        for N in cfg["N_values"]:
            e, bound = est.r_event_frequency(cfg["intensity"], cfg["K"], cfg["s"], cfg["alpha"], N, cfg["reps"],
                                             cfg["seed"], cfg["dimension"], threads)
            holds = bound <= 0 or e.value >= bound - 3 * e.stderr
            ok &= holds
            rows.append(_est_row(e, N=N) | {"bound": bound, "bound_holds": holds})
            summary.append(f"N={N}: frequency {e.value:.6g} +/- {e.stderr:.2g}, bound {bound:.6g}"
                           f"{' (vacuous)' if bound <= 0 else ''}")
        return RunResult(["N"] + _EST_COLS + ["bound", "bound_holds"], rows, summary, ok=ok)

    return work


def _run_mecke(cfg, threads, out):
    g = _connection(cfg)
    _positive(cfg, "intensity", "side")
    _pos_int(cfg, "reps")
    if g.dimension > 2:
        raise ConfigError("connection: mecke-check supports dimension <= 2")
    _budget(cfg["intensity"], cfg["side"], g.dimension, 20_000)

    def work():
        rep = est.mecke_edge_check(g, cfg["intensity"], cfg["side"], cfg["reps"], cfg["seed"], threads)
        ok = abs(rep["z"]) <= 3
        return RunResult(list(rep), [rep], [f"mean edges {rep['empirical_mean']:.6g} +/- {rep['stderr']:.2g}, "
                                            f"reference {rep['reference']:.6g}, z = {rep['z']:.3g}"], ok=ok)

    return work


def _run_pivotal(cfg, threads, out):
    _pos_int(cfg, "max_non_root")
    if cfg["max_non_root"] > exact.UPSET_MAX_M:
        raise ConfigError(f"max_non_root: at most {exact.UPSET_MAX_M}")
    _num_list(cfg, "p_values", positive=False)
    _num_list(cfg, "h_values", positive=False)
    if any(not 0 <= p <= 1 for p in cfg["p_values"]) or any(h < 0 for h in cfg["h_values"]):
        raise ConfigError("p_values must lie in [0, 1] and h_values must be non-negative")

    def work():
        rows, reports = [], []
        for gi, graph in enumerate(exact.rooted_connected_graphs(cfg["max_non_root"])):
            for p in cfg["p_values"]:
                for h in cfg["h_values"]:
                    r = exact.verify_lemma_pivotal(graph, 0, p, h)
                    reports.append(r)
                    rows.append({"graph": gi, "n": graph.n, "edges": " ".join(f"{a}-{b}" for a, b in graph.edges),
                                 "p": p, "h": h, "epsilon": r["epsilon"], "vacuous": r["vacuous"],
                                 "max_violation": r.get("max_violation", 0.0), "pass": r["pass"]})
        ok = all(r["pass"] for r in rows)
        summary = [f"{sum(r['pass'] for r in rows)}/{len(rows)} instances dominated",
                   f"largest epsilon {max(r['epsilon'] for r in rows):.6g}"]

        def dump(d):
            _atomic_write(Path(d) / "reports.json", json.dumps(reports, indent=1, sort_keys=True) + "\n")

        return RunResult(list(rows[0]), rows, summary, ok=ok, extra={"reports": dump})

    return work


def _run_domination(cfg, threads, out):
    try:
        mu = exact.FiniteMeasure(int(math.log2(len(cfg["mu"]))), np.asarray(cfg["mu"], dtype=np.float64))
        nu = exact.FiniteMeasure(int(math.log2(len(cfg["nu"]))), np.asarray(cfg["nu"], dtype=np.float64))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"mu, nu: {exc}") from None
    if mu.m != nu.m or mu.m > exact.UPSET_MAX_M:
        raise ConfigError(f"mu, nu: need equal length 2^m with m <= {exact.UPSET_MAX_M}")

    def work():
        res = exact.stochastic_dominates(mu, nu)
        row = {"m": mu.m, "dominates": res.holds, "max_violation": res.max_violation,
               "witness": " ".join(str(s) for s in sorted(res.witness)) if res.witness else ""}
        return RunResult(list(row), [row], [f"mu <= nu on every up-set: {res.holds}"])

    return work


def _run_lecam(cfg, threads, out):
    _pos_int(cfg, "n_max")
    _num_list(cfg, "p_values", positive=False)
    if any(not 0 <= p <= 1 for p in cfg["p_values"]):
        raise ConfigError("p_values: must lie in [0, 1]")

    def work():
        rows = []
        for n in range(1, cfg["n_max"] + 1):
            for p in cfg["p_values"]:
                tv = exact.tv_binomial_poisson(n, p)
                rows.append({"n": n, "p": p, "tv": tv, "bound": 9 * p, "holds": tv <= 9 * p})
        ok = all(r["holds"] for r in rows)
        worst = max(rows, key=lambda r: r["tv"] / r["bound"] if r["bound"] > 0 else 0.0)
        summary = [f"{sum(r['holds'] for r in rows)}/{len(rows)} grid points satisfy TV <= 9p",
                   f"largest TV/(9p) = {worst['tv'] / worst['bound']:.4g} at n={worst['n']}, p={worst['p']}"]
        return RunResult(["n", "p", "tv", "bound", "holds"], rows, summary, ok=ok)

    return work


def _run_cramer(cfg, threads, out):
    if cfg["alphas"] is None:
        _pos_int(cfg, "grid_points")
    else:
        _num_list(cfg, "alphas")
        if any(a > 0.5 for a in cfg["alphas"]):
            raise ConfigError("alphas: must lie in (0, 1/2]")

    def work():
        a = (np.asarray(cfg["alphas"], dtype=np.float64) if cfg["alphas"] is not None
             else 0.5 * np.arange(1, cfg["grid_points"] + 1) / (cfg["grid_points"] + 1))
        upper = (1 + a) * np.log1p(a) - a
        lower = a + (1 - a) * np.log1p(-a)
        rows = [{"alpha": x, "upper_rate": u, "upper_bound": x * x / 4, "lower_rate": l, "lower_bound": x * x / 12,
                 "holds": bool(u >= x * x / 4 and l >= x * x / 12)} for x, u, l in zip(a, upper, lower)]
        ok = exact.cramer_rate_check(a)
        return RunResult(list(rows[0]), rows, [f"{sum(r['holds'] for r in rows)}/{len(rows)} grid points hold"], ok=ok)

    return work


def _run_g2(cfg, threads, out):
    g = _connection(cfg)
    pts = cfg["points"]
    if not isinstance(pts, list) or not 2 <= len(pts) <= exact.G2_MAX_POINTS:
        raise ConfigError(f"points: need a list of 2..{exact.G2_MAX_POINTS} points")
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != g.dimension:
        raise ConfigError(f"points: each point needs {g.dimension} coordinates")
    if len({tuple(p) for p in arr.tolist()}) != len(arr):
        raise ConfigError("points: duplicate positions")
    _nonneg(cfg, "mc_reps")

    def work():
        p_exact = exact.g2_exact(arr, g)
        row = {"k": len(arr), "exact": p_exact}
        summary = [f"P(connected) = {p_exact:.10g}"]
        if cfg["mc_reps"]:
            freq = exact.g2_monte_carlo(arr, g, int(cfg["mc_reps"]), cfg["seed"])
            se = math.sqrt(max(p_exact * (1 - p_exact), 0.0) / cfg["mc_reps"])
            row |= {"mc_frequency": freq, "mc_stderr": se, "mc_reps": int(cfg["mc_reps"])}
            summary.append(f"Monte Carlo frequency {freq:.6g} (stderr {se:.2g})")
        return RunResult(list(row), [row], summary)

    return work


def _run_plot(cfg, threads, out):
    if cfg["kind"] not in ("decay", "trend"):
        raise ConfigError("kind: must be 'decay' or 'trend'")
    if not isinstance(cfg["input"], str):
        raise ConfigError("input: path to a results.csv is required")
    if cfg["kind"] == "decay":
        rows = _read_rows(cfg["input"], ["n", "value", "ci_lo", "ci_hi"])
    else:
        rows = _read_rows(cfg["input"], ["N", "max_statistic"])

    def work():
        if cfg["kind"] == "decay":
            out_rows = [{"n": int(r["n"]), "log_value": math.log(r["value"]),
                         "log_ci_lo": math.log(r["ci_lo"]) if r["ci_lo"] > 0 else float("-inf"),
                         "log_ci_hi": math.log(r["ci_hi"])} for r in rows if r["value"] > 0]
            note = "# n, natural log of the estimate, natural log of its 95% interval ends (rows with value 0 dropped)"
        else:
            by_n: dict = {}
            for r in rows:
                by_n.setdefault(int(r["N"]), []).append(r["max_statistic"])
            out_rows = [{"N": n, "q25": float(np.quantile(v, 0.25)), "median": float(np.median(v)),
                         "q75": float(np.quantile(v, 0.75)), "outer_reps": len(v)} for n, v in sorted(by_n.items())]
            note = "# N, quartiles of the max-over-vertices statistic across outer replications"
        return RunResult(list(out_rows[0]) if out_rows else ["empty"], out_rows,
                         [f"{len(out_rows)} plot rows ({cfg['kind']})"], extra={"_header_note": note})

    return work


_CONN = {"connection": _INDICATOR}

SUBCOMMANDS: dict[str, tuple[dict, Callable]] = {
    "sample": ({**_CONN, "intensity": 1.0, "side": 10.0, "root": True, "seed": 0}, _run_sample),
    "estimate-psi": ({**_CONN, "intensity": 0.4, "n_values": list(range(1, 31)), "side": 40.0, "reps": 10_000,
                      "seed": 0}, _run_psi),
    "estimate-mh": ({**_CONN, "intensity": 0.4, "h": 0.2, "side": 20.0, "reps": 10_000, "seed": 0}, _run_mh),
    "estimate-mhat": ({**_CONN, "intensity": 0.4, "h": 0.2, "K": 16.0, "s": 0.25, "reps": 10_000, "seed": 0},
                      _run_mhat),
    "coupling-test": ({"connection": {"family": "custom-table", "radii": [0.0, 1.0], "values": [0.05, 0.0],
                                      "dimension": 1},
                       "intensity": 0.5, "K": 8.0, "s_values": [1.0, 0.5, 0.25, 0.125], "reps": 10_000, "seed": 0},
                      _run_coupling),
    "cutoff-test": ({"connection": {"family": "power-law", "alpha": 3.0, "dimension": 2}, "intensity": 0.3,
                     "radii": [2.0, 4.0, 8.0, 16.0], "ks": [1, 2], "side": 40.0, "reps": 10_000, "seed": 0},
                    _run_cutoff),
    "verify-theorem2": ({**_CONN, "intensity": 0.4, "h": 0.2, "n_max": 10, "side": None, "reps": 100_000,
                         "tolerance_sigma": 3.0, "seed": 0}, _run_theorem2),
    "fit-decay": ({"input": None, "n_min": 5, "n_max": 30, "min_count": 10}, _run_fit_decay),
    "transitivity-test": ({**_CONN, "intensity": 0.5, "h": 0.5, "K": 6.0, "N_values": [1, 4, 16], "outer_reps": 50,
                           "inner_reps": 400, "max_vertices": 200, "reference_reps": 20_000, "seed": 0},
                          _run_transitivity),
    "r-event-test": ({"intensity": 1.0, "K": 4.0, "s": 1.0, "alpha": 0.3, "N_values": [200, 500], "dimension": 2,
                      "reps": 1000, "seed": 0}, _run_r_event),
    "mecke-check": ({**_CONN, "intensity": 0.5, "side": 10.0, "reps": 2000, "seed": 0}, _run_mecke),
    "verify-pivotal": ({"max_non_root": 4, "p_values": [0.3, 0.6], "h_values": [0.2, 1.0]}, _run_pivotal),
    "domination-check": ({"mu": [0.25, 0.25, 0.25, 0.25], "nu": [0.25, 0.25, 0.25, 0.25]}, _run_domination),
    "lecam-table": ({"n_max": 50, "p_values": [round(0.01 * i, 2) for i in range(1, 51)]}, _run_lecam),
    "cramer-check": ({"alphas": None, "grid_points": 1000}, _run_cramer),
    "g2-oracle": ({**_CONN, "points": [[0.0, 0.0], [0.5, 0.0], [0.0, 0.8]], "mc_reps": 0, "seed": 0}, _run_g2),
    "plot-data": ({"input": None, "kind": "decay"}, _run_plot),
}

VERIFY_COMMANDS = {"verify-theorem2", "verify-pivotal", "lecam-table", "cramer-check"}


def resolve_config(command: str, config: dict | None = None, seed=None, reps=None) -> dict:
    """Defaults overlaid with ``config`` and the overrides; unknown keys raise ConfigError."""
    if command not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {command!r}")
    defaults, _ = SUBCOMMANDS[command]
    cfg = json.loads(json.dumps(defaults))
    config = dict(config or {})
    named = config.pop("subcommand", command)
    config.pop("version", None)
    if named != command:
        raise ConfigError(f"config is for {named!r}, not {command!r}")
    unknown = sorted(set(config) - set(cfg))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    cfg.update(config)
    if seed is not None:
        if "seed" not in cfg:
            raise ConfigError(f"{command} takes no seed")
        cfg["seed"] = seed
    if reps is not None:
        if "reps" not in cfg:
            raise ConfigError(f"{command} takes no reps")
        cfg["reps"] = reps
    if "seed" in cfg and (not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool)
                          or not 0 <= cfg["seed"] < 2**64):
        raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {cfg['seed']!r}")
    return cfg


def manifest(command: str, cfg: dict) -> dict:
    return {"subcommand": command, "version": __version__, **cfg}


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_csv(columns, rows, note: str | None = None) -> str:
    buf = io.StringIO()
    if note:
        buf.write(note + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def run(command: str, cfg: dict, out_dir: str | Path, threads: int = 1) -> int:
    """Validate, execute and write reports; returns the exit status."""
    _, runner = SUBCOMMANDS[command]
    try:
        work = runner(cfg, threads, out_dir)
    except (ConfigError, KeyError, TypeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        res = work()
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(out_dir)
    note = res.extra.pop("_header_note", None)
    _atomic_write(out / "results.csv", render_csv(res.columns, res.rows, note))
    _atomic_write(out / "manifest.json", json.dumps(manifest(command, cfg), indent=2, sort_keys=True) + "\n")
    status = "PASS" if res.ok else "FAIL"
    head = [f"rcmlab {__version__} {command}"]
    if command in VERIFY_COMMANDS:
        head.append(f"status: {status}")
    _atomic_write(out / "summary.txt", "\n".join(head + res.summary) + "\n")
    for writer in res.extra.values():
        writer(out)
    print("\n".join(head + res.summary))
    if command in VERIFY_COMMANDS and not res.ok:
        return EXIT_ASSERTION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcmlab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"rcmlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (a manifest.json also works)")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        p.add_argument("--reps", type=int, help="replication count, overrides the config")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        p.add_argument("--threads", type=int, default=1, help="worker processes (results do not depend on this)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = None
        if args.config:
            try:
                config = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"--config: {exc}") from None
            if not isinstance(config, dict):
                raise ConfigError("--config: top level must be a JSON object")
        if args.threads < 1:
            raise ConfigError("--threads: must be positive")
        cfg = resolve_config(args.command, config, args.seed, args.reps)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    return run(args.command, cfg, out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
