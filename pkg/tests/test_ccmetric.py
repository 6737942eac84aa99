import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grushin_mfg.ccmetric import (LipschitzViolation, SweepNotConverged, all_pairs, axis_scaling,
                                  bi_estimate_constants, cc_oracle, cc_sweep, check_lipschitz,
                                  d1_distance, d1_dual_gap, d1_value, round_to_marginals,
                                  sinkhorn_transport)
from grushin_mfg.coupling import _random_density
from grushin_mfg.grid import ScalarField, TorusGrid, as_density


def test_distance_along_x1_is_euclidean():
    # [DERIVED] X1 = ∂1 is unit speed and no curve is shorter than |Δx1|
    g = TorusGrid(16, 16)
    d = cc_sweep(g, (0, 3)).dist.reshape(g.shape)
    k = np.arange(16)
    assert np.allclose(d[:, 3], np.minimum(k, 16 - k) / 16, atol=1e-12)


def test_sweep_matches_graph_oracle():
    g = TorusGrid(16, 16)
    rng = np.random.Generator(np.random.Philox(3))
    tab = all_pairs(g)
    for _ in range(10):
        s, t = rng.integers(0, g.size, 2)
        assert abs(tab.dist[s, t] - cc_oracle(g, int(s), int(t))) <= 5 * g.h1


def test_sweep_budget_error():
    with pytest.raises(SweepNotConverged):
        cc_sweep(TorusGrid(32, 32), (0, 0), max_sweeps=1)


def test_table_is_a_metric():
    d = all_pairs(TorusGrid(8, 8)).dist
    assert np.array_equal(d, d.T) and np.all(np.diag(d) == 0)
    assert np.all(d[~np.eye(len(d), dtype=bool)] > 0)
    tri = d[:, None, :] - d[:, :, None] - d[None, :, :]
    assert tri.max() <= 1e-12


def test_chart_profile_square_root_scaling():
    ax = axis_scaling(TorusGrid(64, 64, "ChartGrushin"))
    assert abs(ax["exponent"] - 0.5) <= 0.05


def test_bi_estimate_constants_hold():
    tab = all_pairs(TorusGrid(16, 16))
    c = bi_estimate_constants(tab)
    g = tab.grid
    x = np.stack(g.mesh(), -1).reshape(-1, 2)
    dt = g.torus_distance(x[:, None], x[None, :])
    off = dt > 0
    assert np.all(dt[off] / c["C"] <= tab.dist[off] * (1 + 1e-12))
    assert np.all(tab.dist[off] <= c["C"] * np.sqrt(dt[off]) * (1 + 1e-12))


def test_d1_between_diracs_is_ground_distance():
    # [DERIVED] the only coupling of two point masses moves everything
    g = TorusGrid(8, 8)
    a = np.zeros(g.shape); a[1, 2] = 1 / g.cell_area
    b = np.zeros(g.shape); b[5, 7] = 1 / g.cell_area
    d = d1_distance(ScalarField(g, a, density=True), ScalarField(g, b, density=True)).cost
    assert d == pytest.approx(all_pairs(g).dist[g.index(1, 2), g.index(5, 7)], abs=1e-14)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_d1_symmetric_and_triangle(seed):
    g = TorusGrid(8, 8)
    rng = np.random.Generator(np.random.Philox(seed))
    m = [_random_density(g, rng) for _ in range(3)]
    d = lambda i, j: d1_value(m[i], m[j], g)
    assert d(0, 0) <= 1e-14
    assert d(0, 1) == pytest.approx(d(1, 0), abs=1e-12)
    assert d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12


def test_duality_certificate_and_entropic_gap():
    g = TorusGrid(16, 16)
    rng = np.random.Generator(np.random.Philox(7))
    m1, m2 = (as_density(g, _random_density(g, rng)) for _ in range(2))
    ex = d1_distance(m1, m2, "ExactLP")
    assert d1_dual_gap(m1, m2, ex.potential, ex) >= -1e-8
    # the Kantorovich potential closes the gap
    assert abs(d1_dual_gap(m1, m2, ex.potential, ex)) <= 1e-10
    en = d1_distance(m1, m2, "Entropic")
    assert abs(en.cost - ex.cost) / ex.cost <= 1e-2
    # a rounded plan is feasible, so its cost is an upper bound
    assert en.cost >= ex.cost - 1e-12


def test_rounding_hits_marginals(rng):
    P = rng.random((6, 6))
    r = rng.random(6); r /= r.sum()
    c = rng.random(6); c /= c.sum()
    Q = round_to_marginals(P, r, c)
    assert np.allclose(Q.sum(1), r, atol=1e-15) and np.allclose(Q.sum(0), c, atol=1e-15)
    assert Q.min() >= 0


def test_sinkhorn_plan_marginals():
    g = TorusGrid(8, 8)
    rng = np.random.Generator(np.random.Philox(2))
    mu = _random_density(g, rng).ravel() * g.cell_area
    nu = _random_density(g, rng).ravel() * g.cell_area
    p = sinkhorn_transport(mu, nu, all_pairs(g).dist)
    assert np.allclose(p.plan.sum(1), mu, atol=1e-14) and np.allclose(p.plan.sum(0), nu, atol=1e-14)


def test_lipschitz_check_rejects_steep_potential():
    d = all_pairs(TorusGrid(8, 8)).dist
    phi = np.zeros(64); phi[0] = 10.0
    with pytest.raises(LipschitzViolation):
        check_lipschitz(phi, d)


def test_exact_lp_cap():
    g = TorusGrid(8, 8)
    m = as_density(g, np.ones(g.shape))
    with pytest.raises(ValueError):
        d1_distance(m, m, "ExactLP", lp_cap=10)
