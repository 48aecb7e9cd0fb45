import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcmlab.connection import indicator
from rcmlab.percolation import (
    GhostField,
    SiteConfig,
    connected_to_green,
    exploration_run,
    green_reach_all,
    is_pivotal,
    sample_ghost,
    sample_site_config,
    small_graph,
    thinned_graph,
    thinning_construction,
)
from rcmlab.sampler import explore_cluster

PATH5 = small_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)], root=0)


def _cfg(bits, root=0, p=0.5):
    return SiteConfig(np.array(bits, dtype=bool), root, p)


def _ghost(bits, h=1.0):
    return GhostField(np.array(bits, dtype=bool), h)


def _c0_misses_green(graph, root=0):
    def event(open_mask, green):
        cl = explore_cluster(thinned_graph(graph, SiteConfig(open_mask, root, 0.5), root), root)
        return not any(green[v] for v in cl.vertices)

    return event


def test_site_config_extremes():
    assert sample_site_config(PATH5, 0, 1.0, 3).open.all()
    c = sample_site_config(PATH5, 0, 0.0, 3)
    assert c.open.tolist() == [True, False, False, False, False]
    with pytest.raises(ValueError):
        sample_site_config(PATH5, 0, 1.5, 3)
    with pytest.raises(ValueError):
        _cfg([False, True])


def test_site_config_frequency():
    n = 10_000
    freq = np.mean([sample_site_config(PATH5, 0, 0.3, s).open[1:] for s in range(n)], axis=0)
    assert np.all(np.abs(freq - 0.3) <= 3 * math.sqrt(0.21 / n))


def test_site_configs_monotone_in_p():
    for s in range(50):
        lo = sample_site_config(PATH5, 0, 0.3, s).open
        hi = sample_site_config(PATH5, 0, 0.7, s).open
        assert np.all(lo <= hi)


def test_ghost_examples():
    v = np.arange(6)
    assert not sample_ghost(v, 0.0, 1).green.any()
    assert sample_ghost(v, 50.0, 1).green.all()
    n = 10_000
    freq = np.mean([sample_ghost(v, math.log(2), s).green for s in range(n)], axis=0)
    assert np.all(np.abs(freq - 0.5) <= 3 * math.sqrt(0.25 / n))
    with pytest.raises(ValueError):
        sample_ghost(v, -0.1, 1)


def test_thinned_graph_examples():
    assert thinned_graph(PATH5, _cfg([1, 1, 1, 1, 1]), 0).edge_set == PATH5.edge_set
    closed = thinned_graph(PATH5, _cfg([1, 0, 0, 0, 0]), 0)
    assert explore_cluster(closed, 0).size == 1 and closed.n_edges == 0
    mid = thinned_graph(PATH5, _cfg([1, 1, 0, 1, 1]), 0)
    assert explore_cluster(mid, 0).size == 2
    with pytest.raises(ValueError):
        thinned_graph(PATH5, _cfg([1, 1, 1]), 0)


def test_thinning_construction_n1_keeps_everything():
    sample, dense, omega, thin = thinning_construction(0.5, 1, indicator(1, 2), 8, 4)
    assert omega.open.all()
    assert thin.edge_set == dense.edge_set
    with pytest.raises(ValueError):
        thinning_construction(0.5, 0, indicator(1, 2), 8, 4)


def test_thinning_open_count_mean():
    lam, side, reps = 0.5, 6.0, 2000
    counts = []
    for s in range(reps):
        sample, _, omega, _ = thinning_construction(lam, 8, indicator(1, 2), side, s)
        counts.append(int(omega.open.sum()) - 1)
    mean = lam * side**2
    assert abs(np.mean(counts) - mean) <= 3 * math.sqrt(mean / reps)


def test_thinning_cluster_mean_independent_of_n():
    from rcmlab.estimators import cluster_size_counts

    g = indicator(1.0, 2)
    means = []
    for N in (1, 2, 8):
        c = cluster_size_counts(g, 0.5, 6, 3000, 11, N=N, cap=20)
        sizes = np.repeat(np.arange(len(c)), c)
        means.append((sizes.mean(), sizes.std(ddof=1) / math.sqrt(len(sizes))))
    for (m1, s1), (m2, s2) in itertools.combinations(means, 2):
        assert abs(m1 - m2) <= 3.5 * math.hypot(s1, s2)


def test_exploration_examples():
    iso = small_graph(4, [], root=0)
    assert exploration_run(iso, _cfg([1, 1, 0, 1]), 0).order == (1, 2, 3)
    star = small_graph(4, [(0, 3), (0, 1), (0, 2)], root=0)
    assert exploration_run(star, _cfg([1, 1, 1, 1]), 0).order == (1, 2, 3)
    path = small_graph(4, [(0, 1), (1, 2), (2, 3)], root=0)
    ex = exploration_run(path, _cfg([1, 0, 1, 1]), 0, fixed_order=[3, 1, 2])
    assert ex.order == (1, 3, 2) and ex.states == (False, True, True)
    ex = exploration_run(path, _cfg([1, 1, 1, 0]), 0, fixed_order=[3, 2, 1])
    assert ex.order == (1, 2, 3)


def _all_configs(n):
    for bits in itertools.product([0, 1], repeat=n - 1):
        yield np.array((1,) + bits, dtype=bool)


GRAPHS = [PATH5, small_graph(5, [(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)], 0),
          small_graph(5, [(0, 4), (1, 2), (2, 3)], 0), small_graph(4, [(0, 1), (0, 2), (0, 3), (1, 2)], 0)]


@pytest.mark.parametrize("graph", GRAPHS)
def test_exploration_adapted_and_partitions(graph):
    m = graph.n - 1
    seen: dict = {}
    for o in _all_configs(graph.n):
        ex = exploration_run(graph, o, 0)
        # the full record (order, states) identifies the configuration
        key = (ex.order, ex.states)
        assert key not in seen
        seen[key] = o
        for k in range(m):
            # re-randomise unrevealed states: prefix of length k+1 is unchanged
            for o2 in _all_configs(graph.n):
                revealed = set(ex.order[:k])
                if all(o2[v] == o[v] for v in revealed):
                    assert exploration_run(graph, o2, 0).order[: k + 1] == ex.order[: k + 1]
    assert len(seen) == 2**m


def test_is_pivotal_examples():
    k2 = small_graph(2, [(0, 1)], 0)
    om = _cfg([1, 0])
    assert not is_pivotal(om, _ghost([0, 0]), 1, lambda o, g: True)
    assert is_pivotal(om, _ghost([0, 0]), 1, lambda o, g: bool(o[1]))
    ev = _c0_misses_green(k2)
    assert is_pivotal(om, _ghost([0, 1]), 1, ev)
    assert not is_pivotal(om, _ghost([1, 1]), 1, ev)
    with pytest.raises(ValueError):
        is_pivotal(om, _ghost([0, 0]), 0, ev)


def test_connected_to_green_examples():
    line = small_graph(3, [(0, 1), (1, 2)], None)
    assert connected_to_green(line, np.array([0, 0, 0], bool), _ghost([1, 0, 0]), 0)
    assert not connected_to_green(line, np.array([1, 1, 1], bool), _ghost([0, 0, 0]), 0)
    # x - a - b with a open and b green: b is reached through a
    assert connected_to_green(line, np.array([0, 1, 1], bool), _ghost([0, 0, 1]), 0)
    # a closed interior vertex blocks the path
    assert not connected_to_green(line, np.array([1, 0, 1], bool), _ghost([0, 0, 1]), 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 9), st.data())
def test_green_reach_all_matches_walk(n, data):
    pairs = list(itertools.combinations(range(n), 2))
    edges = data.draw(st.lists(st.sampled_from(pairs), max_size=len(pairs), unique=True))
    open_mask = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    green = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    G = small_graph(n, edges, None)
    fast = green_reach_all(G.adjacency, open_mask, green)
    slow = [connected_to_green(G, open_mask, GhostField(green, 1.0), x) for x in range(n)]
    assert fast.tolist() == slow
