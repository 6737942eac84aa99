import math

import numpy as np
import pytest

from grushin_mfg.coupling import make_coupling
from grushin_mfg.grid import ScalarField, SpaceTimeField, TorusGrid
from grushin_mfg.hjb import (BackwardLinearProblem, PositivityGuardTriggered, hjb_direct,
                             hjb_hopf_cole, hjb_residual, solve_backward_linear, solve_hjb)
from grushin_mfg.mfg import default_m0
from grushin_mfg.schemes import CFLViolation, godunov_hamiltonian

TP = 2 * math.pi


def test_constant_terminal_and_constant_source_exact():
    g = TorusGrid(16, 16)
    nt = 32
    rng = np.random.Generator(np.random.Philox(4))
    V = tuple(rng.uniform(-0.8, 0.8, (nt + 1,) + g.shape) for _ in range(2))
    z = solve_backward_linear(BackwardLinearProblem(ScalarField(g, np.full(g.shape, 2.0)), 0.0, 1.0, nt, V))
    assert np.max(np.abs(z.data - 2.0)) <= 1e-12
    f = SpaceTimeField(g, 0.0, 1.0, np.full((nt + 1,) + g.shape, -0.4))
    z = solve_backward_linear(BackwardLinearProblem(ScalarField(g, np.zeros(g.shape)), 0.0, 1.0, nt, V, f))
    exact = -0.4 * (1 - np.linspace(0, 1, nt + 1))[:, None, None]
    assert np.max(np.abs(z.data - exact)) <= 1e-12


def test_heat_mode_matches_discrete_factor():
    # [DERIVED] implicit Euler on an x1 mode: z^k = (1 - dt λ_h)^{-(N-k)} z^N
    g = TorusGrid(16, 16)
    nt = 20
    X1, _ = g.mesh()
    zT = np.cos(TP * X1)
    z = solve_backward_linear(BackwardLinearProblem(ScalarField(g, zT), 0.0, 1.0, nt))
    lam = -4 / g.h1**2 * math.sin(math.pi * g.h1) ** 2
    for k in range(nt + 1):
        assert np.allclose(z.data[k], (1 - lam / nt) ** (-(nt - k)) * zT, atol=1e-13)


def test_manufactured_solution_converges():
    from grushin_mfg.acceptance import _manufactured_backward

    e = [_manufactured_backward(n) for n in (32, 64)]
    assert e[1] < e[0] / 1.6


def test_cfl_guard():
    g = TorusGrid(16, 16)
    V = (np.full((9,) + g.shape, 50.0), np.zeros((9,) + g.shape))
    with pytest.raises(CFLViolation):
        solve_backward_linear(BackwardLinearProblem(ScalarField(g, np.zeros(g.shape)), 0.0, 1.0, 8, V))


def test_godunov_hamiltonian_of_x2_mode():
    # [DERIVED] for u = sin(2πx2), H = ½ a² (one-sided ∂2 u)², which is zero where a vanishes
    g = TorusGrid(16, 16)
    _, X2 = g.mesh()
    H = godunov_hamiltonian(g, np.sin(TP * X2))
    assert np.all(H >= 0)
    assert np.allclose(H[0], 0.0) and np.allclose(H[g.n1 // 2], 0.0)
    assert np.max(H) == pytest.approx(0.5 * (TP * np.sinc(g.h2)) ** 2, rel=0.2)


def test_direct_and_hopf_cole_gap_is_first_order_in_time():
    g = TorusGrid(16, 16)
    c = make_coupling(g)
    m0 = default_m0(g)
    gaps = []
    for nt in (32, 64, 128):
        mpath = SpaceTimeField(g, 0.0, 1.0, np.broadcast_to(m0.values, (nt + 1,) + g.shape))
        ud = solve_hjb(mpath, c, "Direct")
        uh = solve_hjb(mpath, c, "HopfCole")
        assert np.array_equal(ud.data[-1], c.G(m0.values))
        gaps.append(np.max(np.abs(ud.data - uh.data)))
    assert gaps[0] / gaps[1] > 1.7 and gaps[1] / gaps[2] > 1.8
    assert hjb_residual(ud, mpath, c).shape == (127,) + g.shape


def test_hopf_cole_guard():
    g = TorusGrid(8, 8)
    F = np.full((5,) + g.shape, 2e3)
    with pytest.raises(PositivityGuardTriggered):
        hjb_hopf_cole(g, 0.25, F, np.zeros(g.shape))


def test_hjb_with_constant_data():
    # [DERIVED] u = G + F (T - t) when both are constant in space
    g = TorusGrid(8, 8)
    nt = 16
    F = np.full((nt + 1,) + g.shape, 0.3)
    u = hjb_direct(g, 1 / nt, F, np.full(g.shape, 1.0))
    assert np.allclose(u[:, 0, 0], 1.0 + 0.3 * (1 - np.linspace(0, 1, nt + 1)), atol=1e-13)
