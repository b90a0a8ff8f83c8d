import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import make_graph
from oracles.brute import alive_brute, good_brute
from perclab.clusters import ModelConfig, sample_graph
from perclab.errors import NotWeakDecayError, ParameterError
from perclab.graph_builder import bond_percolate
from perclab.kernels import estimate_delta_eff, long_range, scale_free
from perclab.point_process import cube
from perclab.renorm import (
    MU_GRID,
    RenormParams,
    TransienceParams,
    derive_params,
    find_biclique,
    find_clique,
    is_mu_v_regular,
    stage0_alive,
    stage_alive,
    stage_good,
    survey,
    transience_params,
    validate_params,
)

# hand-built hierarchies: r_1 = ceil(2/9 * 3^2) = 2
TWO = RenormParams(d=2, ell=2.0, k=0.0, theta=1.0, mu=0.3, rho=(2 / 9,), sigma=(3,))
ALIVE = RenormParams(d=2, ell=4.0, k=1.0, theta=0.5, mu=0.3, rho=(2 / 9,), sigma=(3,))
GOOD = TransienceParams(d=1, n1=1, lam=0.6, mu=0.3, alpha=(2, 2, 2), sigma=(4, 3, 3))


def test_r_and_thresholds():
    assert TWO.r(1) == 2 and TWO.stage0_threshold() == 2
    assert ALIVE.stage0_threshold() == 4 and ALIVE.v(1) == pytest.approx(8.0)
    assert GOOD.side(3) == 36 and GOOD.need(3) == 8


def test_stage0_empty_and_complete():
    g = make_graph([[5.0, 5.0]], [], side=12.0)
    assert not stage0_alive(g, cube(4.0, 2), ALIVE).ok
    loc = [[x, y] for x in (-1.5, -0.5, 0.5, 1.5) for y in (-0.5, 0.5)]
    full = make_graph(loc, [(i, j) for i in range(8) for j in range(i + 1, 8)], side=12.0)
    res = stage0_alive(full, cube(4.0, 2), ALIVE)
    assert res.ok and res.witness_size == 8


def test_stage0_straddling_threshold():
    # cube (-2, 2]^2, threshold 4; cluster A has 3 inside plus one vertex just outside,
    # cluster B has 3 inside, joined to A through a vertex just outside; 12 far vertices
    loc = [[-1.5, -1.5], [-1.0, -1.5], [-0.5, -1.5], [-2.5, -1.5],
           [1.0, 1.0], [1.5, 1.0], [1.5, 1.5]]
    loc += [[6.0 + 0.1 * i, 6.0] for i in range(12)] + [[2.5, -1.5]]
    edges = [(0, 1), (1, 2), (0, 3), (4, 5), (5, 6), (2, 19), (19, 4)]
    g = make_graph(loc, edges, side=16.0)
    assert len(loc) == 20
    for k, want in ((0.0, False), (1.0, True)):
        p = RenormParams(d=2, ell=4.0, k=k, theta=0.5, mu=0.3, rho=(2 / 9,), sigma=(3,))
        got = stage0_alive(g, cube(4.0, 2), p).ok
        assert got == want == alive_brute(g.cloud.locations, g.cloud.marks, edges, p, 0, (0.0, 0.0))


def _two_cluster_instance(join):
    loc = [[-2.5, 0.0], [-1.5, 0.0], [-0.5, 0.0], [0.5, 0.0]]
    edges = [(0, 1), (2, 3)] + ([(1, 2)] if join else [])
    return make_graph(loc, edges, side=10.0), edges


def test_stage1_two_adjacent_regular_preclusters():
    g, edges = _two_cluster_instance(join=True)
    res = stage_alive(g, cube(6.0, 2), 1, TWO)
    assert res.ok and res.conditions == {"A": True, "B": True, "C": True}
    assert alive_brute(g.cloud.locations, g.cloud.marks, edges, TWO, 1, (0.0, 0.0))


def test_stage1_without_joining_edge_fails_clique_condition():
    g, edges = _two_cluster_instance(join=False)
    res = stage_alive(g, cube(6.0, 2), 1, TWO)
    assert not res.ok and res.conditions == {"A": True, "B": True, "C": False}
    assert not alive_brute(g.cloud.locations, g.cloud.marks, edges, TWO, 1, (0.0, 0.0))


def test_stage1_all_dead():
    g = make_graph([[0.0, 0.0]], [], side=10.0)
    res = stage_alive(g, cube(6.0, 2), 1, TWO)
    assert not res.ok and not res.conditions["A"]


def test_stage1_single_required_cube():
    # r_1 = 1: alive iff some alive subcube has a regular precluster
    one = RenormParams(d=2, ell=2.0, k=0.0, theta=1.0, mu=0.3, rho=(1 / 9,), sigma=(3,))
    assert one.r(1) == 1
    g, _ = _two_cluster_instance(join=False)
    assert stage_alive(g, cube(6.0, 2), 1, one).ok
    lonely = make_graph([[0.0, 0.0], [2.0, 2.0]], [], side=10.0)
    assert not stage_alive(lonely, cube(6.0, 2), 1, one).ok


def test_cube_side_checked():
    g, _ = _two_cluster_instance(join=True)
    with pytest.raises(ParameterError):
        stage_alive(g, cube(5.0, 2), 1, TWO)
    with pytest.raises(ParameterError):
        stage0_alive(g, cube(3.0, 2), TWO)


@pytest.mark.parametrize("seed", range(10))
def test_stage1_survey_matches_brute_force(seed):
    g = sample_graph(ModelConfig(long_range(0.3, 1.5, 2)), 36.0, seed, palm=False)
    rep = survey(g, ALIVE, 1)
    recs = [r for r in rep.records if r["stage"] == 1]
    assert len(recs) == 9
    for r in recs:
        want = alive_brute(g.cloud.locations, g.cloud.marks, g.edges.tolist(), ALIVE, 1, tuple(r["center"]))
        assert r["alive"] == want
    frac = np.mean([r["alive"] for r in recs])
    assert rep.fraction(1) == pytest.approx(frac)


def test_survey_stage0_only():
    # stage cubes sit on a lattice through the origin, fully inside the domain
    g = sample_graph(ModelConfig(long_range(0.05, 1.5, 2)), 16.0, 1, palm=False)
    rep = survey(g, ALIVE, 0)
    assert len(rep.stages) == 1 and rep.stages[0]["cubes"] == 9
    centers = [(x, y) for x in (-4.0, 0.0, 4.0) for y in (-4.0, 0.0, 4.0)]
    assert sorted(tuple(r["center"]) for r in rep.records) == centers
    direct = [stage0_alive(g, cube(4.0, 2, c), ALIVE).ok for c in centers]
    assert 0 < np.mean(direct) < 1
    assert rep.fraction(0) == pytest.approx(np.mean(direct))
    assert rep.to_jsonl().count("\n") in (9, 10)


def test_survey_complete_graph_all_alive():
    g = sample_graph(ModelConfig(long_range(1e12, 0.01, 2), intensity=4.0), 24.0, 2, palm=False)
    rep = survey(g, ALIVE, 1)
    assert rep.fraction(0) == 1.0 and rep.fraction(1) == 1.0


def test_good_bottom_stage():
    loc = [[-1.5], [-0.5], [0.5], [1.5]]
    g = make_graph(loc, [(0, 1), (1, 2), (2, 3)], marks=[0.1, 0.2, 0.3, 0.4], side=40.0)
    assert stage_good(g, cube(4.0, 1), 1, GOOD).ok
    sparse = make_graph(loc, [], marks=[0.1, 0.2, 0.3, 0.4], side=40.0)
    assert not stage_good(sparse, cube(4.0, 1), 1, GOOD).ok


@pytest.mark.parametrize("seed", range(12))
def test_three_stage_goodness_matches_brute_force(seed):
    beta = [0.05, 0.15, 0.4, 1.5][seed % 4]
    g = sample_graph(ModelConfig(long_range(beta, 1.2, 1), intensity=1.5), 36.0, seed, palm=False)
    for n, side in ((2, 12.0), (3, 36.0)):
        for c in np.arange(-18 + side / 2, 18, side):
            got = stage_good(g, cube(side, 1, (float(c),)), n, GOOD)
            assert got.exact
            assert got.ok == good_brute(g.cloud.locations, g.cloud.marks, g.edges.tolist(), GOOD, n, (float(c),))


@given(st.integers(0, 10 ** 6), st.floats(0.2, 0.95))
def test_alive_and_good_monotone_in_edges(seed, p):
    g = sample_graph(ModelConfig(long_range(1.0, 1.5, 2)), 36.0, seed % 1000, palm=False)
    lo = bond_percolate(g, p, seed)
    a, b = survey(lo, ALIVE, 1), survey(g, ALIVE, 1)
    for r1, r2 in zip(a.records, b.records):
        assert r1["alive"] <= r2["alive"]
    g1 = sample_graph(ModelConfig(long_range(1.0, 1.2, 1), intensity=1.5), 36.0, seed % 1000, palm=False)
    lo1 = bond_percolate(g1, p, seed)
    for r1, r2 in zip(survey(lo1, GOOD, 3).records, survey(g1, GOOD, 3).records):
        assert r1["good"] <= r2["good"]


def test_find_clique_and_biclique():
    adj = np.zeros((5, 5), bool)
    for i, j in [(0, 1), (1, 2), (0, 2), (3, 4)]:
        adj[i, j] = adj[j, i] = True
    cl, exact = find_clique(adj, 3)
    assert cl == [0, 1, 2] and exact
    assert find_clique(adj, 4)[0] is None
    B = np.ones((3, 3), bool)
    res, _ = find_biclique(B, [0, 0, 1], [5, 6, 6], 2)
    assert res is not None and len(set(np.array([0, 0, 1])[res[0]])) == 2
    assert find_biclique(B, [0, 0, 0], [5, 6, 7], 2)[0] is None


def test_mu_v_regular_uses_smallest_marks():
    assert is_mu_v_regular([0.9, 0.01, 0.02, 0.95], 0.3, 2)
    assert not is_mu_v_regular([0.9], 0.3, 2)


def test_derive_long_range_picks_smallest_mu():
    p = derive_params(long_range(1.0, 1.5, 2), 2, 0.5, 0.8, 2, 1.0)
    assert p.mu_star == MU_GRID[0]
    assert validate_params(p) == []
    assert p.sigma[0] == 1 and all(s % 2 for s in p.sigma)


def test_derive_rejects_strong_decay():
    with pytest.raises(NotWeakDecayError):
        derive_params(long_range(1.0, 2.5, 1), 1, 0.5, 0.8, 2, 1.0)


def test_derive_scale_free_inequalities():
    k = scale_free(1.0, 0.8, 2.5, 1)
    p = derive_params(k, 1, 0.5, 0.8, 2, 1.0)
    delta_star = estimate_delta_eff(k, p.mu_star, np.geomspace(1e2, 1e2 * 4.0 ** 6, 7)).slope
    assert delta_star < 2
    assert 1 < p.nu < min(1 / (1 - p.mu_star), 2 / delta_star)
    assert p.mu == pytest.approx(1 - p.nu * (1 - p.mu_star))
    assert p.omega > 2 * p.nu / (p.d * (p.nu - 1))
    assert all(0 < r < 0.25 for r in p.rho)
    n = len(p.rho)
    assert p.rho[-1] * n ** 2 > 1


def test_validate_custom_sequences():
    bad = RenormParams(d=2, ell=2.0, k=1.0, theta=0.5, mu=0.1, rho=(0.3, 0.01), sigma=(1, 3))
    assert [name for name, _ in validate_params(bad)] == ["density_bound"]
    p = derive_params(long_range(1.0, 1.5, 2), 2, 0.5, 0.8, 2, 1.0)
    low = RenormParams(**{**p.__dict__, "omega": 0.5 * 2 * p.nu / (2 * (p.nu - 1)), "sigma_window_from": None})
    assert "omega_bound" in [name for name, _ in validate_params(low)]


def test_transience_params_from_derivation():
    p = derive_params(long_range(1.0, 1.5, 2), 2, 0.5, 0.8, 2, 1.0)
    tp = transience_params(p)
    assert max(0.5, 1 / p.nu) < tp.lam < 1
    with pytest.raises(ParameterError):
        TransienceParams(d=2, n1=1, lam=0.4, mu=0.3)
