import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import grushin_mfg.heisenberg as H

coord = st.floats(-2, 2, allow_nan=False)
point = st.tuples(coord, coord, coord)


@settings(max_examples=50, deadline=None)
@given(point, point, point)
def test_group_law_associative(p, q, r):
    lhs = H.compose(H.compose(p, q), r)
    rhs = H.compose(p, H.compose(q, r))
    assert np.allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(point)
def test_inverse_and_identity(p):
    assert np.allclose(H.compose(p, H.inverse(p)), 0, atol=1e-12)
    assert np.allclose(H.compose(H.IDENTITY.array, p), p)


@settings(max_examples=50, deadline=None)
@given(point, st.floats(0.1, 5))
def test_norm_is_homogeneous(p, r):
    assert H.homogeneous_norm(H.dilate(p, r)) == pytest.approx(r * H.homogeneous_norm(p), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(point, point, st.floats(0, 1))
def test_character_is_multiplicative(p, q, t):
    v = H.DriftPath(np.array([0.0, 1.0]), np.array([0.4, -1.2]), np.array([0.9, 0.1]))
    lhs = H.chi(t, H.compose(p, q), v)
    rhs = H.chi(t, p, v) * H.chi(t, q, v)
    assert abs(lhs - rhs) <= 1e-14 * abs(rhs)


def test_value_at_identity_closed_form():
    # [DERIVED] Lévy-area characteristic function: with z = -8A the density at 0 is 1/(64 t²)
    for t in (0.25, 0.5, 1.0):
        assert H.gamma0(t, (0, 0, 0)) == pytest.approx(1 / (64 * t * t), rel=1e-8)


@settings(max_examples=10, deadline=None)
@given(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)), st.floats(0.5, 2))
def test_parabolic_scaling(p, r):
    # [DERIVED] Γ(r² t, δ_r p) = r^{-Q} Γ(t, p) with Q = 4
    t = 0.3
    a = H.gamma0(r * r * t, H.dilate(p, r))
    b = H.gamma0(t, p)
    assert a == pytest.approx(b / r**4, rel=1e-7, abs=1e-14)


def test_symmetry_and_rotation():
    p = np.array([0.4, -0.3, 0.2])
    assert H.gamma0(0.5, p) == pytest.approx(H.gamma0(0.5, H.inverse(p)), rel=1e-10)
    c, s = math.cos(0.7), math.sin(0.7)
    q = np.array([c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
    assert H.gamma0(0.5, p) == pytest.approx(H.gamma0(0.5, q), rel=1e-10)


def test_normalization():
    assert abs(H.normalization(0.5) - 1) <= 1e-3


def test_literal_reading_diverges():
    with pytest.raises(H.QuadratureNotConverged):
        H.gamma0(0.5, (0.1, 0.1, 0.1), H.PAPER_FORMULA)


def test_calibration_record():
    rec = H.load_calibration()
    assert rec["variant"] == {"phase": "z", "weight": "coth", "norm": "horizontal"}
    assert H.resolve_variant("OracleCalibrated") == H.KernelVariant("z", "coth", "horizontal")


def test_monte_carlo_cells_agree():
    r = H.mc_agreement(0.5, "OracleCalibrated", n_cells=5, n_samples=50_000, seed=3)
    assert r["max_z"] <= 3.5


def test_gaussian_fit_exponents():
    ts = [0.1, 0.3, 1.0]
    f0 = H.gaussian_fit("OracleCalibrated", 0, ts, [(0, 0, 0), (0.5, 0.3, 0.2)])
    f1 = H.gaussian_fit("OracleCalibrated", 1, ts, [(0.5, 0.3, 0.2), (1, 0, 0.5)])
    assert abs(f0.exponent - 2.0) <= 0.05 and abs(f1.exponent - 2.5) <= 0.1
    assert f0.max_violation <= 1e-9
    with pytest.raises(ValueError):
        H.gaussian_fit("OracleCalibrated", 0, [0.5, 0.5], [(0, 0, 0)])


def test_drift_kernel_solves_its_equation():
    v = H.DriftPath.constant(1.0, 0.5)
    r = H.pde_residual(0.2, 0.7, (0.3, 0.2, 0.1), v)
    g = H.gamma_drift(0.2, 0.7, np.array([0.3, 0.2, 0.1]), v)
    assert abs(r) <= 1e-4 * g


def test_drift_energy_exact():
    v = H.DriftPath(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([0.0, 0.0]))
    # [DERIVED] ∫_0^1 t² dt
    assert v.energy(0.0, 1.0) == pytest.approx(1 / 3, rel=1e-14)


def test_drift_path_validation():
    with pytest.raises(ValueError):
        H.DriftPath(np.array([0.0, 0.0]), np.zeros(2), np.zeros(2))
