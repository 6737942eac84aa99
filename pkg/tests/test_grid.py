import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from grushin_mfg.grid import (Profile, ScalarField, SpaceTimeField, TorusGrid, apply_div,
                              apply_laplacian, apply_X, as_density, holder_norm)
from grushin_mfg.ccmetric import all_pairs

TP = 2 * math.pi
finite = st.floats(-10, 10, allow_nan=False)


def test_grid_rejects_odd_or_tiny():
    with pytest.raises(ValueError):
        TorusGrid(9, 16)
    with pytest.raises(ValueError):
        TorusGrid(4, 4)


def test_profiles():
    g = TorusGrid(8, 8, "ChartGrushin")
    # chart representative of x1 in [-1/2, 1/2)
    assert np.allclose(g.a, [0, 0.125, 0.25, 0.375, -0.5, -0.375, -0.25, -0.125])
    assert Profile.parse("sinprofile") is Profile.SIN


def test_centered_derivative_of_trig_mode_is_exact_symbol():
    # [DERIVED] centered difference of sin(2πx) is sin(2πh)/h cos(2πx)
    g = TorusGrid(16, 16)
    X1, _ = g.mesh()
    f = ScalarField(g, np.sin(TP * X1))
    expect = math.sin(TP * g.h1) / g.h1 * np.cos(TP * X1)
    assert np.max(np.abs(apply_X(f, 1).values - expect)) < 1e-12


def test_laplacian_of_x1_mode_is_discrete_eigenvalue():
    # [DERIVED] compact second difference: eigenvalue -(4/h²) sin²(πh)
    g = TorusGrid(32, 32)
    X1, _ = g.mesh()
    f = ScalarField(g, np.cos(TP * X1))
    lam = -4 / g.h1**2 * math.sin(math.pi * g.h1) ** 2
    assert np.max(np.abs(apply_laplacian(f).values - lam * f.values)) < 1e-10


def test_wide_stencil_is_divergence_of_gradient(g16, rng):
    f = ScalarField(g16, rng.standard_normal(g16.shape))
    wide = apply_laplacian(f, "wide").values
    assert np.allclose(wide, apply_div(apply_X(f, 1), apply_X(f, 2)).values, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(arrays(float, (8, 8), elements=finite), arrays(float, (8, 8), elements=finite))
def test_summation_by_parts(u, v):
    g = TorusGrid(8, 8)
    f, q = ScalarField(g, u), ScalarField(g, v)
    for i in (1, 2):
        lhs = f.integrate(apply_X(q, i))
        rhs = -apply_X(f, i).integrate(q)
        assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))
    assert abs(f.integrate(apply_laplacian(q)) - apply_laplacian(f).integrate(q)) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(arrays(float, (8, 8), elements=st.floats(0.01, 5)))
def test_as_density_has_unit_mass(v):
    g = TorusGrid(8, 8)
    m = as_density(g, v)
    assert abs(m.mass() - 1) < 1e-12 and m.values.min() >= 0


def test_density_flag_validates():
    g = TorusGrid(8, 8)
    with pytest.raises(ValueError):
        ScalarField(g, np.ones(g.shape) * 2, density=True)
    with pytest.raises(ValueError):
        ScalarField(g, np.full(g.shape, np.nan))


def test_csv_round_trip(tmp_path, g16, rng):
    f = ScalarField(g16, rng.standard_normal(g16.shape))
    f.to_csv(tmp_path / "f.csv")
    back = ScalarField.from_csv(tmp_path / "f.csv")
    assert back.grid == g16 and np.array_equal(back.values, f.values)


def test_space_time_series(tmp_path, g16):
    s = SpaceTimeField(g16, 0.0, 1.0, np.zeros((4,) + g16.shape))
    man = s.to_csv_series(tmp_path, "u")
    assert man.exists() and len(list(tmp_path.glob("u_*.csv"))) == 4
    assert np.allclose(s.times, [0, 1 / 3, 2 / 3, 1])


def test_holder_norm_of_constant_is_sup(g16):
    f = ScalarField(g16, np.full(g16.shape, -2.5))
    rep = holder_norm(f, 0.5, 0, all_pairs(g16))
    assert rep.norm == pytest.approx(2.5)
