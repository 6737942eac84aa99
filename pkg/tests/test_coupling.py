import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grushin_mfg.coupling import (NodeKernel, _random_density, check_hypotheses, eval_F,
                                  flat_derivative, make_coupling, smoothing_kernel, zero_coupling)
from grushin_mfg.grid import ScalarField, TorusGrid, as_density


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.4))
def test_monotone_pairing(seed, sigma):
    g = TorusGrid(8, 8)
    c = make_coupling(g, sigma=sigma)
    rng = np.random.Generator(np.random.Philox(seed))
    m1, m2 = _random_density(g, rng), _random_density(g, rng)
    for op in (c.F, c.G):
        assert g.cell_area * np.sum((op(m1) - op(m2)) * (m1 - m2)) >= -1e-12


def test_smoother_preserves_mass_and_constants():
    g = TorusGrid(16, 16)
    k = smoothing_kernel(g, 0.15, 1.0, 1)
    assert np.allclose(k.apply(np.ones(g.shape)), 1.0, atol=1e-12)


def test_symbol_matches_dense_matrix():
    g = TorusGrid(8, 8)
    k = smoothing_kernel(g, 0.2, 1.5, 2)
    M = k.matrix()
    dense = NodeKernel(g, matrix=M)
    rng = np.random.Generator(np.random.Philox(0))
    m = rng.random(g.shape)
    assert np.allclose(dense.apply(m), k.apply(m), atol=1e-12)
    assert np.allclose(M, M.T, atol=1e-12)


def test_flat_derivative_is_exact_for_linear_coupling():
    # [DERIVED] F is affine in m, so the difference quotient equals K ρ for every s
    g = TorusGrid(8, 8)
    c = make_coupling(g)
    m = as_density(g, np.ones(g.shape))
    X1, _ = g.mesh()
    rho = np.cos(2 * np.pi * X1)
    d = flat_derivative(c, "F")
    lin = g.cell_area * d.normalized(m) @ rho.ravel()
    fd = (c.F(m.values + 0.1 * rho) - c.F(m.values)) / 0.1
    assert np.allclose(lin, fd.ravel(), atol=1e-12)
    # normalization: ∫ δF/δm(x, y) m(dy) = 0
    assert np.allclose(d.normalized(m) @ m.flat * g.cell_area, 0, atol=1e-12)


def test_hypotheses_report():
    g = TorusGrid(8, 8)
    r = check_hypotheses(make_coupling(g), n_samples=20)
    assert r.ok and r.min_eig_f >= -1e-10


def test_non_monotone_kernel_gets_witness():
    g = TorusGrid(8, 8)
    M = -np.eye(g.size) / g.cell_area
    c = make_coupling(g)
    bad = type(c)(c.base_f, c.base_g, NodeKernel(g, matrix=M), c.kernel_g)
    r = check_hypotheses(bad, n_samples=5)
    assert not r.monotone and r.witness is not None and r.witness["pairing"] < 0


def test_zero_coupling():
    g = TorusGrid(8, 8)
    c = zero_coupling(g)
    assert c.is_decoupled
    assert np.all(c.F(np.ones(g.shape)) == 0)


def test_grid_mismatch_and_bad_sigma():
    g = TorusGrid(8, 8)
    with pytest.raises(ValueError):
        eval_F(make_coupling(g), ScalarField(TorusGrid(16, 16), np.ones((16, 16))))
    with pytest.raises(ValueError):
        smoothing_kernel(g, 0.0, 1.0, 2)
    with pytest.raises(ValueError):
        NodeKernel(g, symbol=np.zeros((3, 3))).apply(np.ones(g.shape))
