import numpy as np
import pytest

from grushin_mfg.grid import ScalarField, as_density
from grushin_mfg.master import (KernelMissing, c1_expansion_error, eval_U, flow_consistency,
                                master_residual, measure_derivative_fd)
from grushin_mfg.mfg import default_m0


@pytest.fixture(scope="module")
def point8(g8, base8):
    p = eval_U(0.0, default_m0(g8), base8.coupling, dt=1 / 32, tol=1e-11)
    p.kernel(1e-10)
    return p


def _direction(g):
    X1, X2 = g.mesh()
    r = np.cos(2 * np.pi * X1) + 0.5 * np.sin(2 * np.pi * (X1 - X2))
    return 0.3 * (r - r.mean())


def test_terminal_identity(g8, base8):
    m = as_density(g8, 0.5 * default_m0(g8).values + 0.5)
    p = eval_U(1.0, m, base8.coupling)
    assert np.array_equal(p.U.values, base8.coupling.G(m.values))
    with pytest.raises(KernelMissing):
        p.kernel()


def test_off_mesh_start_rejected(g8, base8):
    with pytest.raises(ValueError, match="time mesh"):
        eval_U(0.013, default_m0(g8), base8.coupling)


def test_fd_derivative_matches_kernel(g8, point8):
    fd = measure_derivative_fd(0.0, point8.m0, _direction(g8), point8.coupling, K=point8.K,
                               base=point8, tol=1e-11, dt=1 / 32)
    assert fd["kernel_gap"] <= fd["tolerance"]
    assert fd["difference_ratios"][0] == pytest.approx(2.0, abs=0.2)


def test_c1_error_is_quadratic(g8, point8):
    rho = _direction(g8)
    errs = [c1_expansion_error(0.0, point8.m0, ScalarField(g8, point8.m0.values + s * rho, density=True),
                               point8.coupling, point8.K, 1e-11, base=point8, dt=1 / 32)["sup"]
            for s in (0.2, 0.1)]
    assert errs[1] / errs[0] == pytest.approx(0.25, abs=0.1)


def test_flow_consistency(point8):
    assert flow_consistency(point8, 1e-11)["gap"] <= 1e-9


def test_residual_routes_agree(point8):
    rk = master_residual(point8, route="kernel", tol=1e-11)
    ra = master_residual(point8, route="adjoint", tol=1e-11)
    assert np.max(np.abs(rk.values - ra.values)) <= 1e-8
    with pytest.raises(ValueError):
        master_residual(point8, route="other")


def test_direction_validation(g8, point8):
    with pytest.raises(ValueError, match="zero mass"):
        measure_derivative_fd(0.0, point8.m0, np.ones(g8.shape), point8.coupling)
    with pytest.raises(ValueError, match="densities"):
        measure_derivative_fd(0.0, point8.m0, 100 * _direction(g8), point8.coupling)
