import math

import numpy as np
import pytest

from grushin_mfg.coupling import zero_coupling
from grushin_mfg.grid import ScalarField, SpaceTimeField, as_density
from grushin_mfg.kfp import forward_sweep
from grushin_mfg.linearized import (KernelBudgetExceeded, KernelK, LinearizedProblem,
                                    amplitude_sweep, build_kernel_K, energy_term, kernel_cost,
                                    representation_defects, solve_linearized)
from grushin_mfg.mfg import default_m0, solve_mfg

TP = 2 * math.pi


@pytest.fixture(scope="module")
def kernel8(base8):
    return build_kernel_K(base8, tol=1e-10)


def _modes(g):
    X1, X2 = g.mesh()
    return np.cos(TP * X1), np.sin(TP * (X1 + X2))


def test_matches_central_difference_of_the_nonlinear_map(base8):
    # [DERIVED] the discrete scheme is differentiated exactly, so the central quotient is O(s²) away
    g = base8.grid
    r1, _ = _modes(g)
    rho = 0.3 * r1
    z, _ = solve_linearized(LinearizedProblem(base8, ScalarField(g, rho)), tol=1e-12)
    gaps = []
    for s in (0.2, 0.1):
        up = solve_mfg(0.0, as_density(g, base8.m.data[0] + s * rho), base8.coupling, tol=1e-13, nt=base8.nt)
        dn = solve_mfg(0.0, as_density(g, base8.m.data[0] - s * rho), base8.coupling, tol=1e-13, nt=base8.nt)
        gaps.append(np.max(np.abs((up.u.data - dn.u.data) / (2 * s) - z.data)))
    assert gaps[1] <= gaps[0] / 3.5


def test_superposition(base8):
    g = base8.grid
    r1, r2 = _modes(g)
    sol = lambda r: solve_linearized(LinearizedProblem(base8, ScalarField(g, r)), tol=1e-11)
    za, ra = sol(r1)
    zb, rb = sol(r2)
    zc, rc = sol(2 * r1 - 3 * r2)
    assert np.max(np.abs(zc.data - 2 * za.data + 3 * zb.data)) <= 1e-9
    assert np.max(np.abs(rc.data.sum(axis=(1, 2)))) * g.cell_area <= 1e-12


def test_zero_coupling_gives_pure_transport(g8):
    s = solve_mfg(0.0, default_m0(g8), zero_coupling(g8), nt=32)
    r1, _ = _modes(g8)
    z, rho = solve_linearized(LinearizedProblem(s, ScalarField(g8, r1)))
    assert np.max(np.abs(z.data)) == 0.0
    # [DERIVED] with z = 0 the density equation is the base KFP started from rho0
    expect = forward_sweep(g8, s.dt, s.nt, r1, s.drift())
    assert np.allclose(rho.data, expect, atol=1e-14)
    assert np.max(np.abs(build_kernel_K(s).K)) == 0.0


def test_energy_is_nonnegative(base8):
    g = base8.grid
    r1, _ = _modes(g)
    z, _ = solve_linearized(LinearizedProblem(base8, ScalarField(g, r1)))
    assert energy_term(z, base8.m) >= 0


def test_amplitude_linearity(base8):
    r1, _ = _modes(base8.grid)
    rep = amplitude_sweep(base8, ScalarField(base8.grid, r1), scales=(1e-2, 1.0))
    assert rep["slope_z"] == pytest.approx(1.0, abs=1e-6)


def test_representation_formula(base8, kernel8):
    assert max(representation_defects(base8, kernel8, n=4, tol=1e-10)) <= 1e-9


def test_kernel_is_normalized(base8, kernel8):
    g = base8.grid
    assert np.max(np.abs(kernel8.K @ base8.m.data[0].ravel() * g.cell_area)) <= 1e-12


def test_kernel_round_trip(tmp_path, base8, kernel8):
    path, side = kernel8.save(tmp_path / "K.bin")
    back = KernelK.load(path, ScalarField(base8.grid, base8.m.data[0]))
    assert np.array_equal(back.K, kernel8.K) and back.normalized
    assert side.exists() and path.stat().st_size == 8 * base8.grid.size**2


def test_kernel_budget(base8):
    with pytest.raises(KernelBudgetExceeded, match="linearized solves"):
        build_kernel_K(base8, max_nodes=10)
    assert kernel_cost(base8.grid, base8.nt)["linear_solves"] == base8.grid.size


def test_source_terms_are_validated(base8):
    g = base8.grid
    bad = SpaceTimeField(g, 0.0, 1.0, np.zeros((5,) + g.shape))
    with pytest.raises(ValueError):
        LinearizedProblem(base8, ScalarField(g, np.zeros(g.shape)), b=bad)


def test_inhomogeneous_terms_enter_linearly(base8):
    g = base8.grid
    r1, r2 = _modes(g)
    shape = (base8.nt + 1,) + g.shape
    b = SpaceTimeField(g, 0.0, 1.0, np.broadcast_to(r2, shape))
    c = (np.broadcast_to(0.2 * r1, shape), np.broadcast_to(0.1 * r2, shape))
    zero = ScalarField(g, np.zeros(g.shape))
    full, _ = solve_linearized(LinearizedProblem(base8, zero, b=b, cvec=c, z_T_extra=ScalarField(g, r1)),
                               tol=1e-11)
    parts = [solve_linearized(LinearizedProblem(base8, zero, **kw), tol=1e-11)[0].data
             for kw in ({"b": b}, {"cvec": c}, {"z_T_extra": ScalarField(g, r1)})]
    assert np.max(np.abs(full.data - sum(parts))) <= 1e-9
