"""Acceptance criteria 1-13 at their stated tolerances, on pinned seeds.

Each test prints one ``criterion N: PASS|FAIL`` line; the lines are also
collected into the terminal summary. Runs that go through the command line
front end are recorded so that criterion 13 can re-execute them from their
manifests.
"""

import csv
import json
import math
import time

import numpy as np
import pytest
from scipy import stats

from rcmlab import cli, exact
from rcmlab.connection import exponential, indicator, power_law
from rcmlab.estimators import cluster_size_counts
from rcmlab.stats import Estimate, ci_ordered_nonincreasing, fit_linear

SEED = 20261016
RUNS: list[tuple[int, str, object]] = []  # (criterion, subcommand, output directory)
API_RERUNS: list[tuple[int, object]] = []  # (criterion, zero-argument check of thread invariance)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def _cli(workdir, number, command, name, **config):
    out = workdir / name
    t0 = time.perf_counter()
    code = cli.run(command, cli.resolve_config(command, config), out)
    RUNS.append((number, command, out))
    return code, out, time.perf_counter() - t0


def _rows(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _estimate(row):
    return Estimate(float(row["value"]), int(row["reps"]), float(row["stderr"]), float(row["ci_lo"]),
                    float(row["ci_hi"]))


def test_criterion_01_le_cam_table(workdir, criterion):
    code, out, dt = _cli(workdir, 1, "lecam-table", "c01")
    rows = _rows(out / "results.csv")
    grid = {(int(r["n"]), round(float(r["p"]), 2)) for r in rows}
    full = grid == {(n, round(0.01 * i, 2)) for n in range(1, 51) for i in range(1, 51)}
    ok = code == 0 and full and all(float(r["tv"]) <= float(r["bound"]) for r in rows) and dt < 1.0
    worst = max(float(r["tv"]) / float(r["bound"]) for r in rows)
    assert criterion(1, ok, f"{len(rows)} grid points, max TV/(9p) = {worst:.4f}, {dt:.2f}s")


def test_criterion_02_pivotal_lemma(workdir, criterion):
    code, out, dt = _cli(workdir, 2, "verify-pivotal", "c02", max_non_root=4)
    rows = _rows(out / "results.csv")
    worst = max(float(r["max_violation"]) for r in rows)
    n_graphs = len({r["graph"] for r in rows})
    ok = code == 0 and n_graphs == 1 + 1 + 3 + 11 + 58 and worst <= 1e-10 and dt < 300
    assert criterion(2, ok, f"{len(rows)} instances over {n_graphs} graphs, max violation {worst:.2e}, {dt:.1f}s")


def test_criterion_03_g2_oracle(workdir, criterion):
    rng = np.random.default_rng(SEED)
    families = {"indicator": {"family": "indicator", "radius": 1.0, "dimension": 2},
                "exponential": {"family": "exponential", "scale": 1.0, "dimension": 2},
                "power-law": {"family": "power-law", "alpha": 3.0, "dimension": 2}}
    t0 = time.perf_counter()
    worst, bad = 0.0, 0
    for fam, spec in families.items():
        for i in range(20):
            pts = rng.uniform(0.0, 1.5, size=(4, 2)).tolist()
            code, out, _ = _cli(workdir, 3, "g2-oracle", f"c03-{fam}-{i}", connection=spec, points=pts,
                                mc_reps=100_000, seed=SEED + i)
            r = _rows(out / "results.csv")[0]
            diff = abs(float(r["mc_frequency"]) - float(r["exact"]))
            se = float(r["mc_stderr"])
            z = diff / se if se > 0 else (0.0 if diff == 0 else math.inf)
            worst = max(worst, z)
            bad += code != 0 or z > 3
    dt = time.perf_counter() - t0
    assert criterion(3, bad == 0 and dt < 120, f"60 configurations, max |z| = {worst:.2f}, {dt:.1f}s")


def _merge_sparse(a, b, minimum=10):
    """Merge adjacent histogram bins until each pooled bin holds at least ``minimum`` counts."""
    cols, cur = [], np.zeros(2)
    for x, y in zip(a, b):
        cur = cur + (x, y)
        if cur.sum() >= minimum:
            cols.append(cur)
            cur = np.zeros(2)
    if cur.sum() and cols:
        cols[-1] = cols[-1] + cur
    return np.array(cols).T


def test_criterion_04_thinning_marginal(criterion):
    g = indicator(1.0, 2)
    args = (g, 0.5, 10.0, 10_000, SEED)
    t0 = time.perf_counter()
    direct = cluster_size_counts(*args, cap=20)
    thinned = cluster_size_counts(*args, N=8, cap=20)
    dt = time.perf_counter() - t0
    table = _merge_sparse(direct[1:], thinned[1:])
    p = stats.chi2_contingency(table).pvalue
    API_RERUNS.append((4, lambda: np.array_equal(thinned, cluster_size_counts(*args, N=8, cap=20, threads=2))
                       and np.array_equal(direct, cluster_size_counts(*args, cap=20, threads=2))))
    assert criterion(4, p > 0.01 and dt < 300, f"chi-square p = {p:.3f} over {table.shape[1]} bins, {dt:.1f}s")


def test_criterion_05_theorem2(workdir, criterion):
    t0 = time.perf_counter()
    code, out, _ = _cli(workdir, 5, "verify-theorem2", "c05", intensity=0.4, h=0.2, n_max=10, reps=100_000,
                        seed=SEED)
    rows = _rows(out / "results.csv")
    code0, out0, _ = _cli(workdir, 5, "verify-theorem2", "c05-h0", intensity=0.4, h=0.0, n_max=10,
                          reps=100_000, seed=SEED)
    rows0 = _rows(out0 / "results.csv")
    dt = time.perf_counter() - t0
    ok_main = all(float(r["lhs"]) <= float(r["rhs"]) + 3 * math.hypot(float(r["lhs_se"]), float(r["rhs_se"]))
                  for r in rows)
    ok_zero = all(abs(float(r["lhs"]) - float(r["rhs"])) <= 3 * math.hypot(float(r["lhs_se"]), float(r["rhs_se"]))
                  for r in rows0)
    ok = code == 0 and code0 == 0 and len(rows) == 10 and ok_main and ok_zero and dt < 1800
    least = min(float(r["margin"]) for r in rows)
    assert criterion(5, ok, f"smallest margin {least:.1f} sigma, h=0 identity {'holds' if ok_zero else 'fails'}, "
                            f"{dt:.0f}s")


def test_criterion_06_decay_fit(workdir, criterion):
    t0 = time.perf_counter()
    code, psi, _ = _cli(workdir, 6, "estimate-psi", "c06-psi", intensity=0.4, n_values=list(range(1, 31)),
                        side=40.0, reps=200_000, seed=SEED)
    code2, fit, _ = _cli(workdir, 6, "fit-decay", "c06-fit", input=str(psi / "results.csv"), n_min=5, n_max=30,
                         min_count=10)
    dt = time.perf_counter() - t0
    r = _rows(fit / "results.csv")[0]
    rate, r2, lo = float(r["rate"]), float(r["r2"]), float(r["rate_ci_lo"])
    ok = code == 0 and code2 == 0 and r2 >= 0.98 and rate > 0 and lo > 0 and dt < 1800
    assert criterion(6, ok, f"c = {rate:.4f} (CI lower {lo:.4f}), R^2 = {r2:.5f}, n in [{r['n_lo']}, {r['n_hi']}], "
                            f"{dt:.0f}s")


def test_criterion_07_coupling(workdir, criterion):
    code, out, dt = _cli(workdir, 7, "coupling-test", "c07", intensity=0.5, K=8.0, s_values=[1.0, 0.5, 0.25, 0.125],
                         reps=10_000, seed=SEED)
    rows = _rows(out / "results.csv")
    xs = [float(r["s"]) for r in rows]
    ests = [_estimate(r) for r in rows]
    fit = fit_linear(xs, ests)
    ordered = xs == sorted(xs, reverse=True) and ci_ordered_nonincreasing(ests)
    ok = code == 0 and ordered and fit.intercept_ci[0] <= 0 <= fit.intercept_ci[1] and dt < 600
    vals = ", ".join(f"{e.value:.4f}" for e in ests)
    assert criterion(7, ok, f"P(disagree) = {vals}; intercept CI ({fit.intercept_ci[0]:.4f}, "
                            f"{fit.intercept_ci[1]:.4f}), {dt:.1f}s")


def test_criterion_08_cutoff(workdir, criterion):
    code, out, dt = _cli(workdir, 8, "cutoff-test", "c08", intensity=0.3, radii=[2.0, 4.0, 8.0, 16.0], ks=[1, 2],
                         side=40.0, reps=10_000, seed=SEED)
    rows = _rows(out / "results.csv")
    ok = code == 0 and dt < 900
    for k in (1, 2):
        sub = sorted((r for r in rows if int(r["k"]) == k), key=lambda r: float(r["R"]))
        ok &= ci_ordered_nonincreasing([_estimate(r) for r in sub])
    ok &= all(float(r["value"]) <= float(r["tail_bound"]) + 3 * float(r["stderr"]) for r in rows if int(r["k"]) == 1)
    k1 = ", ".join(f"{float(r['value']):.4f}" for r in rows if int(r["k"]) == 1)
    assert criterion(8, ok, f"k=1 estimates over R = 2, 4, 8, 16: {k1}, {dt:.1f}s")


def test_criterion_09_r_event(workdir, criterion):
    # N = 2000 is added because the bound is negative, hence vacuous, at N = 200 and 500
    code, out, dt = _cli(workdir, 9, "r-event-test", "c09", intensity=1.0, K=4.0, s=1.0, alpha=0.3,
                         N_values=[200, 500, 2000], reps=1000, seed=SEED)
    rows = _rows(out / "results.csv")
    ok = code == 0 and dt < 300 and all(
        float(r["bound"]) <= 0 or float(r["value"]) >= float(r["bound"]) - 3 * float(r["stderr"]) for r in rows)
    detail = "; ".join(f"N={r['N']}: {float(r['value']):.3f} vs bound {float(r['bound']):.3f}" for r in rows)
    assert criterion(9, ok, f"{detail}, {dt:.1f}s")


def test_criterion_10_mecke(workdir, criterion):
    settings = [({"family": "indicator", "radius": 1.0, "dimension": 1}, 1.0, 10.0),
                ({"family": "exponential", "scale": 1.0, "dimension": 2}, 0.5, 8.0),
                ({"family": "power-law", "alpha": 3.0, "dimension": 2}, 0.5, 6.0)]
    zs, ok, total = [], True, 0.0
    for i, (spec, lam, side) in enumerate(settings):
        code, out, dt = _cli(workdir, 10, "mecke-check", f"c10-{i}", connection=spec, intensity=lam, side=side,
                             reps=2000, seed=SEED)
        z = float(_rows(out / "results.csv")[0]["z"])
        zs.append(z)
        total += dt
        ok &= code == 0 and abs(z) <= 3
    ok &= total < 300
    assert criterion(10, ok, f"z = {', '.join(f'{z:.2f}' for z in zs)}, {total:.1f}s")


def test_criterion_11_transitivity(workdir, criterion):
    code, out, dt = _cli(workdir, 11, "transitivity-test", "c11", intensity=0.5, h=0.5, K=6.0, N_values=[1, 4, 16],
                         outer_reps=50, inner_reps=400, seed=SEED)
    rows = _rows(out / "results.csv")
    med = {N: float(np.median([float(r["max_statistic"]) for r in rows if int(r["N"]) == N])) for N in (1, 4, 16)}
    ref = float(rows[0]["reference_mh"])
    ok = code == 0 and med[1] > med[4] > med[16] and abs(med[16] - ref) <= 0.1 and dt < 3600
    assert criterion(11, ok, f"medians {med[1]:.3f}, {med[4]:.3f}, {med[16]:.3f} vs m_h {ref:.3f}, {dt:.0f}s")


def test_criterion_12_cramer(workdir, criterion):
    code, out, dt = _cli(workdir, 12, "cramer-check", "c12", grid_points=1000)
    rows = _rows(out / "results.csv")
    alphas = [float(r["alpha"]) for r in rows]
    ok = (code == 0 and len(rows) == 1000 and all(r["holds"] == "1" for r in rows)
          and 0 < min(alphas) and max(alphas) < 0.5 and dt < 1.0)
    assert criterion(12, ok, f"{sum(r['holds'] == '1' for r in rows)}/{len(rows)} grid points hold, {dt:.2f}s")


def test_criterion_13_reproducibility(workdir, criterion):
    if not RUNS:
        pytest.skip("no acceptance runs recorded")
    mismatched = []
    for number, command, out in RUNS:
        manifest = out / "manifest.json"
        assert json.loads(manifest.read_text())["subcommand"] == command
        again = out.with_name(out.name + "-rerun")
        code = cli.main([command, "--config", str(manifest), "--out", str(again), "--threads", "2"])
        if code != 0 or (out / "results.csv").read_bytes() != (again / "results.csv").read_bytes():
            mismatched.append(f"{number}:{out.name}")
    for number, check in API_RERUNS:
        if not check():
            mismatched.append(f"{number}:api")
    ok = not mismatched
    assert criterion(13, ok, f"{len(RUNS)} manifests and {len(API_RERUNS)} direct runs re-executed with 2 workers"
                             + (f"; mismatched {mismatched}" if mismatched else ""))
