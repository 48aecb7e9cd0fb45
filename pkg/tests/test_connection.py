import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rcmlab.connection import (
    BoxLattice,
    assign_box,
    cutoff,
    evaluate,
    exponential,
    from_spec,
    g_hat,
    indicator,
    integral,
    power_law,
    table,
    tail_integral,
    unit_ball_volume,
)

FAMILIES = [indicator(1.0, 2), exponential(1.0, 2), power_law(3.0, 2), table([0, 0.5, 2], [0.9, 0.4, 0], 2),
            exponential(0.7, 1), power_law(2.5, 1), indicator(1.5, 3)]


def test_evaluate_examples():
    assert evaluate(indicator(1), [0.5, 0]) == 1.0
    assert evaluate(indicator(1), [1.5, 0]) == 0.0
    assert evaluate(power_law(3, 2), [2, 0]) == pytest.approx(0.125, abs=1e-15)


def test_evaluate_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        evaluate(indicator(1, 2), [0.1, 0.2, 0.3])


def test_cutoff_examples():
    g = indicator(1)
    assert cutoff(g, 2) == g
    assert cutoff(g, 0.5) == indicator(0.5)
    gr = cutoff(power_law(3, 2), 2)
    assert evaluate(gr, [3, 0]) == 0.0
    assert evaluate(gr, [2, 0]) == pytest.approx(0.125)
    assert gr.support_radius == 2
    with pytest.raises(ValueError):
        cutoff(g, 0)
    with pytest.raises(ValueError):
        cutoff(g, -1)


def test_g_hat_examples():
    # odd K/s puts centers on the integers
    lat = BoxLattice(21, 1, 1)
    g = exponential(1.0, 1)
    assert g_hat(g, lat, [0.0], [0.0]) == g.profile(0.0)
    assert g_hat(g, lat, [0.0], [10.0]) == pytest.approx(math.exp(-9))
    assert g_hat(g, lat, [0.0], [1.0]) == g.profile(0.0)
    with pytest.raises(ValueError):
        g_hat(g, lat, [0.3], [0.0])


def test_integral_examples():
    assert integral(indicator(1, 2)) == pytest.approx(math.pi)
    assert integral(indicator(1, 1)) == pytest.approx(2.0)
    assert integral(exponential(1, 1)) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        power_law(2.0, 2)


@pytest.mark.parametrize("g", FAMILIES, ids=lambda g: f"{g.family}-d{g.dimension}")
def test_integral_matches_radial_quadrature(g):
    d = g.dimension
    surface = d * unit_ball_volume(d)
    brk = [0.5, 1.0, 1.5, 2.0]
    upper = g.support_radius if math.isfinite(g.support_radius) else np.inf
    val, _ = integrate.quad(lambda r: r ** (d - 1) * g.profile(r), 0, min(upper, 50), points=brk if upper > 2 else None,
                            limit=200)
    if not math.isfinite(upper):
        val += integrate.quad(lambda r: r ** (d - 1) * g.profile(r), 50, np.inf)[0]
    assert integral(g) == pytest.approx(surface * val, rel=1e-7)


def test_integral_of_cutoff_increases_to_integral():
    g = power_law(3, 2)
    vals = [integral(cutoff(g, R)) for R in (0.5, 1, 2, 4, 8, 1e6)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(integral(g), rel=1e-5)
    assert integral(cutoff(g, 4)) + tail_integral(g, 4) == pytest.approx(integral(g))


def test_assign_box_examples():
    assert assign_box([0.3], BoxLattice(2, 1, 1)).tolist() == [0.5]
    assert assign_box([-1.0], BoxLattice(2, 1, 1)).tolist() == [-0.5]
    assert assign_box([1.9, -0.1], BoxLattice(4, 2, 2)).tolist() == [1.0, -1.0]
    with pytest.raises(ValueError):
        assign_box([1.0], BoxLattice(2, 1, 1))


def test_lattice_rejects_non_integer_ratio():
    with pytest.raises(ValueError):
        BoxLattice(4, 1.5, 1)


def test_box_partition_on_fine_grid():
    lat = BoxLattice(4, 0.5, 2)
    m = 1000
    ax = -2 + 4 * (np.arange(m) + 0.5) / m
    pts = np.stack(np.meshgrid(ax, ax), axis=-1).reshape(-1, 2)
    idx = lat.flat(lat.index_of(pts))
    counts = np.bincount(idx, minlength=lat.n_boxes)
    assert counts.sum() == m * m
    assert np.all(counts == counts[0])
    centers = lat.center_of(lat.index_of(pts))
    assert np.all(np.abs(pts - centers) <= 0.25 + 1e-12)


def test_lattice_even_ratio_partitions_window():
    lat = BoxLattice(2, 1, 1)
    assert lat.centers.ravel().tolist() == [-0.5, 0.5]


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(FAMILIES[:4]), st.floats(0.1, 5), st.integers(0, 2**32))
def test_dominance_chain(g, R, seed):
    rng = np.random.default_rng(seed)
    lat = BoxLattice(8, 0.5, 2)
    x = rng.uniform(-4, 4, size=(200, 2))
    y = rng.uniform(-4, 4, size=(200, 2))
    gv = evaluate(g, x - y)
    assert np.all(evaluate(cutoff(g, R), x - y) <= gv)
    gh = np.array([g_hat(g, lat, a, b) for a, b in zip(assign_box(x, lat), assign_box(y, lat))])
    assert np.all(gv <= gh + 1e-15)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(FAMILIES), st.lists(st.floats(0, 20), min_size=2, max_size=30))
def test_profile_is_non_increasing_probability(g, rs):
    rs = np.sort(np.array(rs))
    v = g.profile(rs)
    assert np.all((v >= 0) & (v <= 1))
    assert np.all(np.diff(v) <= 1e-15)


def test_g_hat_decreases_with_refinement():
    g = exponential(1.0, 2)
    rng = np.random.default_rng(3)
    x = rng.uniform(-4, 4, size=(100, 2))
    y = rng.uniform(-4, 4, size=(100, 2))
    prev = None
    for s in (2, 1, 0.5, 0.25, 0.125):
        lat = BoxLattice(8, s, 2)
        cur = np.array([g_hat(g, lat, a, b) for a, b in zip(assign_box(x, lat), assign_box(y, lat))])
        if prev is not None:
            assert np.all(cur <= prev + 1e-15)
        upper = g.profile(np.maximum(np.linalg.norm(x - y, axis=1) - 2 * math.sqrt(2) * s, 0))
        assert np.all(cur <= upper + 1e-15)
        prev = cur


def test_from_spec_round_trip_and_unknown_keys():
    for g in FAMILIES + [cutoff(power_law(3, 2), 4)]:
        assert from_spec(g.describe()) == g
    with pytest.raises(ValueError):
        from_spec({"family": "indicator", "radius": 1, "colour": "red"})
    with pytest.raises(ValueError):
        from_spec({"family": "gaussian"})


def test_table_validation():
    with pytest.raises(ValueError):
        table([0, 1], [0.5, 0.6], 2)
    with pytest.raises(ValueError):
        table([0, 1], [0.5, 0.1], 2)
    with pytest.raises(ValueError):
        table([0.1, 1], [0.5, 0], 2)
