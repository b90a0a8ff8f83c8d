import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from oracles.brute import pair_sum_edges
from helpers import annulus_table, cloud, make_cloud, make_graph
from perclab.errors import ParameterError
from perclab.graph_builder import (
    bond_percolate,
    build_graph,
    build_graph_cells,
    build_graph_naive,
    induced_subgraph,
    truncate,
    write_edges_csv,
)
from perclab.kernels import bernoulli_nn, eval_phi, long_range, scale_free
from perclab.point_process import BoxDomain, attach_marks, cube, sample_poisson


@pytest.mark.parametrize("builder", ["naive", "cells"])
def test_zero_kernel_gives_no_edges(builder):
    g = build_graph(cloud(10, 2, 0), bernoulli_nn(0.0, 2), 1, builder)
    assert g.m == 0


@pytest.mark.parametrize("builder", ["naive", "cells"])
def test_certain_edge(builder):
    c = make_cloud([[0.0, 0.0], [0.5, 0.5]], side=4.0)
    g = build_graph(c, bernoulli_nn(1.0, 2), 3, builder)
    assert g.m == 1 and tuple(g.edges[0]) == (0, 1)


@pytest.mark.parametrize("builder", ["naive", "cells"])
def test_empty_cloud(builder):
    c = attach_marks(sample_poisson(BoxDomain((0.0, 0.0)), 1.0, 0), 0)
    assert build_graph(c, long_range(1, 1.5, 2), 0, builder).m == 0


@pytest.mark.parametrize("builder", ["naive", "cells"])
def test_mean_edge_count_matches_pair_sum(builder):
    c = cloud(14.2, 2, 4)
    assert 150 < len(c) < 260
    k = long_range(1.0, 1.5, 2)
    phi = lambda s, t, r: float(eval_phi(k, 0.5, 0.5, r)) if r > 0 else np.inf
    mean = pair_sum_edges(phi, c.locations, c.marks)
    p = []
    for i in range(len(c)):
        r = np.sqrt(((c.locations[i + 1:] - c.locations[i]) ** 2).sum(1))
        p.append(-np.expm1(-k.beta * r ** -3.0))
    p = np.concatenate(p)
    sd = np.sqrt(np.sum(p * (1 - p)) / 1000)
    counts = [build_graph(c, k, s, builder).m for s in range(1000)]
    assert abs(np.mean(counts) - mean) < 3 * sd


def test_scale_free_pair_sum():
    c = cloud(12.0, 2, 8)
    k = scale_free(0.5, 0.6, 2.0, 2)
    mean = pair_sum_edges(lambda s, t, r: float(eval_phi(k, s, t, r)), c.locations, c.marks)
    counts = np.array([build_graph_cells(c, k, seed=s).m for s in range(600)])
    assert abs(counts.mean() - mean) < 3.5 * counts.std(ddof=1) / np.sqrt(counts.size)


def test_single_cell_matches_pairwise_probabilities():
    c = make_cloud([[0, 0], [1, 0], [0, 2], [3, 3], [-2, 1], [-3, -3]], side=8.0)
    k = scale_free(1.0, 0.5, 1.5, 2)
    R = 4000
    freq = np.zeros((6, 6))
    for s in range(R):
        g = build_graph_cells(c, k, cell_side=100.0, seed=s)
        freq[g.edges[:, 0], g.edges[:, 1]] += 1
    for i in range(6):
        for j in range(i + 1, 6):
            r = np.linalg.norm(c.locations[i] - c.locations[j])
            p = float(-np.expm1(-eval_phi(k, c.marks[i], c.marks[j], r)))
            assert abs(freq[i, j] / R - p) < 4 * np.sqrt(p * (1 - p) / R) + 1e-9


def test_cells_vs_naive_annulus_chi_square():
    c = cloud(22.4, 2, 21)
    assert 400 < len(c) < 620
    bins = np.r_[0, 0.5, 1, 1.5, 2, 3, 4, 6, 8, 12, 40]
    table = annulus_table(c, long_range(1.0, 1.5, 2), 1000, bins)
    assert stats.chi2_contingency(table)[1] > 0.01


@given(st.integers(0, 2 ** 32), st.sampled_from(["naive", "cells"]))
def test_edges_canonical_and_deterministic(seed, builder):
    c = cloud(8.0, 2, seed % 1000, boundary="torus")
    g1 = build_graph(c, scale_free(1.0, 0.6, 1.8, 2), seed, builder)
    g2 = build_graph(c, scale_free(1.0, 0.6, 1.8, 2), seed, builder)
    np.testing.assert_array_equal(g1.edges, g2.edges)
    if g1.m:
        assert np.all(g1.edges[:, 0] < g1.edges[:, 1])
        assert np.all(np.diff(g1.edges[:, 0]) >= 0)
        np.testing.assert_allclose(g1.lengths, c.domain.distance(c.locations[g1.edges[:, 0]], c.locations[g1.edges[:, 1]]))
        assert g1.lengths.max() <= np.sqrt(2) * 4 + 1e-9


def test_dimension_mismatch():
    with pytest.raises(ParameterError):
        build_graph_naive(cloud(4, 2, 0), long_range(1, 1, 1), 0)


def random_graph(seed):
    return build_graph(cloud(30.0, 2, seed), long_range(2.0, 1.5, 2), seed)


def test_bond_percolation_extremes():
    g = random_graph(0)
    np.testing.assert_array_equal(bond_percolate(g, 1.0, 5).edges, g.edges)
    assert bond_percolate(g, 0.0, 5).m == 0
    with pytest.raises(ParameterError):
        bond_percolate(g, 1.5, 0)


def test_bond_percolation_binomial():
    g = random_graph(1)
    g = g.with_edges(np.arange(g.m) < 1000)
    assert g.m == 1000
    kept = np.array([bond_percolate(g, 0.5, s).m for s in range(400)])
    assert abs(kept.mean() - 500) < 3 * np.sqrt(250 / 400)
    assert abs(kept.var(ddof=1) / 250 - 1) < 0.25


@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 50))
def test_bond_percolation_nested(p, q, seed):
    p, q = min(p, q), max(p, q)
    g = random_graph(seed % 5)
    a = {tuple(e) for e in bond_percolate(g, p, seed).edges}
    b = {tuple(e) for e in bond_percolate(g, q, seed).edges}
    assert a <= b


def test_truncate_examples():
    g = make_graph([[0, 0], [0.5, 0], [2.0, 0], [4.5, 0]], [(0, 1), (1, 2), (0, 3)], side=12.0)
    np.testing.assert_allclose(sorted(g.lengths), [0.5, 1.5, 4.5])
    assert truncate(g, 2.0).m == 2
    assert truncate(g, 100.0).m == 3
    assert truncate(g, 0.1).m == 0
    with pytest.raises(ParameterError):
        truncate(g, 0.0)


@given(st.floats(0.01, 50), st.floats(0.01, 50))
def test_truncation_nested(a, b):
    g = random_graph(2)
    lo, hi = min(a, b), max(a, b)
    assert {tuple(e) for e in truncate(g, lo).edges} <= {tuple(e) for e in truncate(g, hi).edges}


def test_induced_full_domain_identity():
    g = random_graph(3)
    h = induced_subgraph(g, g.cloud.domain)
    np.testing.assert_array_equal(h.edges, g.edges)
    np.testing.assert_array_equal(h.parent_ids, np.arange(g.n))


def test_induced_empty_box():
    g = random_graph(3)
    h = induced_subgraph(g, BoxDomain((0.0, 0.0)))
    assert h.n == 0 and h.m == 0


def test_induced_hand_enumeration():
    loc = [[-3.5, 0], [-2, 1], [-1, -1], [-0.5, 2], [0, 0], [0.5, 0.5], [1.5, -2], [2.5, 1], [3, 3], [3.5, -3.5]]
    edges = [(0, 1), (1, 2), (2, 4), (4, 5), (5, 7), (3, 8), (6, 9), (0, 9), (2, 3), (7, 8)]
    g = make_graph(loc, edges, side=8.0)
    half = BoxDomain((4.0, 8.0), center=(-2.0, 0.0))  # x in (-4, 0]
    h = induced_subgraph(g, half)
    inside = [0, 1, 2, 3, 4]
    assert list(h.parent_ids) == inside
    expect = sorted((inside.index(i), inside.index(j)) for i, j in edges if i in inside and j in inside)
    assert [tuple(e) for e in h.edges] == expect


def test_induced_requires_contained_box():
    g = random_graph(3)
    with pytest.raises(ParameterError):
        induced_subgraph(g, cube(100.0, 2))


def test_induced_nested_parent_ids():
    g = random_graph(4)
    a = induced_subgraph(g, cube(20.0, 2))
    b = induced_subgraph(a, cube(10.0, 2))
    direct = induced_subgraph(g, cube(10.0, 2))
    np.testing.assert_array_equal(b.parent_ids, direct.parent_ids)
    np.testing.assert_array_equal(b.edges, direct.edges)


def test_edges_csv():
    g = make_graph([[0, 0], [1, 0]], [(0, 1)], side=4.0)
    assert write_edges_csv(g) == "i,j,length\n0,1,1.0\n"
