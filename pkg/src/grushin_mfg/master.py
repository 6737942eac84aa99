"""Master-equation layer: U(t0, x, m0), its flat derivative and the residual."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ccmetric import d1_value
from .coupling import Coupling
from .grid import (ScalarField, TorusGrid, as_density, holder_norm, laplacian_array,
                   x_derivatives)
from .linearized import KernelK, LinearizedProblem, build_kernel_K, solve_linearized
from .mfg import MFGSolution, solve_mfg, time_mesh


class KernelMissing(ValueError):
    pass


@dataclass(eq=False)
class MasterPoint:
    """``U(t0, ·, m0)`` with the MFG solution it came from (``None`` at ``t0 = T``)."""

    t0: float
    m0: ScalarField
    U: ScalarField
    coupling: Coupling = field(repr=False)
    solution: MFGSolution | None = field(default=None, repr=False)
    T: float = 1.0
    dt: float | None = None
    _K: KernelK | None = field(default=None, repr=False)

    @property
    def grid(self) -> TorusGrid:
        return self.m0.grid

    @property
    def K(self) -> KernelK | None:
        return self._K

    def kernel(self, tol: float = 1e-8) -> KernelK:
        """Normalized kernel at ``(t0, m0)``, built on first use."""
        if self._K is None:
            if self.solution is None:
                raise KernelMissing("no MFG solution at t0 = T; the kernel is K_G")
            self._K = build_kernel_K(self.solution, tol=tol)
        return self._K


def eval_U(t0: float, m0: ScalarField, c: Coupling, T: float = 1.0, dt: float | None = None,
           tol: float = 1e-8, **solve_kw) -> MasterPoint:
    """Solve the MFG system from ``(t0, m0)`` and record ``u(t0, ·)``.

    The time step defaults to ``T / (2 max(n1, n2))`` regardless of ``t0`` so
    that solves started at different times share one mesh.
    """
    g = m0.grid
    if m0.values.min() < 0 or abs(m0.mass() - 1) > 1e-12:
        raise ValueError("m0 must be a probability density")
    if dt is None:
        dt = T / (2 * max(g.n1, g.n2))
    if abs(t0 - T) < 1e-14:
        return MasterPoint(T, m0, ScalarField(g, c.G(m0.values)), c, None, T, dt)
    nt, _ = time_mesh(g, t0, T, None, dt)
    if abs(nt * dt - (T - t0)) > 1e-9 * T:
        raise ValueError(f"t0={t0} is not on the time mesh of step {dt}")
    s = solve_mfg(t0, m0, c, tol=tol, T=T, nt=nt, **solve_kw)
    return MasterPoint(t0, m0, ScalarField(g, s.u.data[0]), c, s, T, dt)


def flow_consistency(p: MasterPoint, tol: float = 1e-8) -> dict:
    """``‖U(t1, ·, m(t1)) - u(t1, ·)‖_∞`` at the mid-time node ``t1``."""
    s = p.solution
    if s is None:
        raise ValueError("flow consistency needs t0 < T")
    k = s.nt // 2
    t1 = s.t0 + k * s.dt
    m1 = as_density(p.grid, np.maximum(s.m.data[k], 0.0))
    q = eval_U(t1, m1, p.coupling, T=p.T, dt=s.dt, tol=tol)
    return {"t1": t1, "gap": float(np.max(np.abs(q.U.values - s.u.data[k])))}


def _perturbed(m0: ScalarField, rho: np.ndarray, s: float) -> ScalarField:
    v = m0.values + s * rho
    if v.min() < 0:
        raise ValueError(f"m0 + s·rho leaves the densities at s={s}")
    return ScalarField(m0.grid, v, density=True)


def measure_derivative_fd(t0: float, m0: ScalarField, rho: np.ndarray, c: Coupling,
                          s_list=(0.2, 0.1, 0.05), tol: float = 1e-10, K: KernelK | None = None,
                          base: MasterPoint | None = None, **kw) -> dict:
    """Difference quotients of U along a zero-mass direction, extrapolated to s = 0.

    The quotients are fitted by ``Q(s) = A + B s + C s²``; ``A`` is the limit and
    ``|C| s_min²`` the fitted remainder scale.  With a kernel the limit is compared
    against ``Kρ``.
    """
    rho = np.asarray(rho, float)
    g = m0.grid
    if abs(g.cell_area * rho.sum()) > 1e-12:
        raise ValueError("direction must have zero mass")
    s_list = sorted(s_list, reverse=True)
    if len(s_list) < 3:
        raise ValueError("need at least three step sizes")
    for s in s_list:
        if (m0.values + s * rho).min() < 0:
            raise ValueError(f"m0 + s·rho leaves the densities at s={s}")
    p0 = base if base is not None else eval_U(t0, m0, c, tol=tol, **kw)
    Q = np.array([(eval_U(t0, _perturbed(m0, rho, s), c, tol=tol, **kw).U.values - p0.U.values) / s
                  for s in s_list])
    V = np.vander(np.asarray(s_list), 3, increasing=True)
    coef = np.linalg.lstsq(V, Q.reshape(len(s_list), -1), rcond=None)[0]
    A = coef[0].reshape(g.shape)
    C = coef[2].reshape(g.shape)
    diffs = [float(np.max(np.abs(Q[i] - Q[i + 1]))) for i in range(len(s_list) - 1)]
    ratios = [diffs[i] / diffs[i + 1] if diffs[i + 1] > 0 else math.nan
              for i in range(len(diffs) - 1)]
    s_min = s_list[-1]
    out = {"s": list(s_list), "quotients": Q, "limit": A, "difference_ratios": ratios,
           "remainder": float(np.max(np.abs(C))) * s_min**2,
           "order": float(math.log2(ratios[-1])) if ratios and ratios[-1] > 0 else math.nan}
    if K is not None:
        out["kernel_gap"] = float(np.max(np.abs(A - K.apply(rho))))
        out["tolerance"] = max(10 * tol, out["remainder"])
    return out


def c1_expansion_error(t0: float, m0: ScalarField, m0_hat: ScalarField, c: Coupling,
                       K: KernelK, tol: float = 1e-10, dcc=None, base: MasterPoint | None = None,
                       alpha: float = 0.5, **kw) -> dict:
    """``U(m̂0) - U(m0) - ∫K d(m̂0 - m0)`` in sup norm (and Hölder surrogate with ``dcc``)."""
    g = m0.grid
    diff = m0_hat.values - m0.values
    if not np.any(diff):
        return {"sup": 0.0, "holder": 0.0 if dcc is not None else None, "d1": 0.0, "ratio": 0.0}
    p0 = base if base is not None else eval_U(t0, m0, c, tol=tol, **kw)
    p1 = eval_U(t0, m0_hat, c, tol=tol, **kw)
    e = p1.U.values - p0.U.values - K.apply(diff)
    d1 = d1_value(m0.values, m0_hat.values, g)
    hn = holder_norm(ScalarField(g, e), alpha, 2, dcc).norm if dcc is not None else None
    return {"sup": float(np.max(np.abs(e))), "holder": hn, "d1": d1,
            "ratio": float(np.max(np.abs(e))) / d1**2}


def master_residual(p: MasterPoint, dt_probe: float | None = None, route: str = "kernel",
                    tol: float = 1e-10) -> ScalarField:
    """Every term of the master equation at ``(t0, ·, m0)`` with centered differences.

    ``route="kernel"`` sums y-derivatives of the stored kernel against ``m0``.
    ``route="adjoint"`` moves the y-derivatives onto ``m0`` by summation by parts
    and evaluates both integral terms with one linearized solve, which avoids
    the full kernel on large grids.
    """
    g = p.grid
    s = p.solution
    if s is None:
        raise ValueError("residual needs t0 < T")
    if dt_probe is None:
        dt_probe = 2 * s.dt
    q = eval_U(p.t0 + dt_probe, p.m0, p.coupling, T=p.T, dt=s.dt, tol=tol)
    U = p.U.values
    m0 = p.m0.values
    x1, x2 = x_derivatives(g, U)
    if route == "kernel":
        if p.K is None:
            raise KernelMissing("master residual needs the kernel at m0")
        n = g.size
        Ky = p.K.K.reshape((n,) + g.shape)
        lapK = laplacian_array(g, Ky)
        k1, k2 = x_derivatives(g, Ky)
        w = g.cell_area * m0
        I1 = np.einsum("xij,ij->x", lapK, w).reshape(g.shape)
        I2 = np.einsum("xij,ij->x", k1 * x1 + k2 * x2, w).reshape(g.shape)
        integral = I2 - I1
    elif route == "adjoint":
        integral = -_adjoint_field_response(p, x1, x2, tol)
    else:
        raise ValueError("route must be 'kernel' or 'adjoint'")
    res = (-(q.U.values - U) / dt_probe - laplacian_array(g, U) + 0.5 * (x1**2 + x2**2)
           + integral - p.coupling.F(m0))
    return ScalarField(g, res)


def _adjoint_field_response(p: MasterPoint, x1, x2, tol: float) -> np.ndarray:
    """``K(Δm0 + div(m0 D U))``, equal to ``I1 - I2`` by summation by parts."""
    from .grid import divergence_array

    g = p.grid
    m0 = p.m0.values
    rho0 = laplacian_array(g, m0) + divergence_array(g, m0 * x1, m0 * x2)
    z, _ = solve_linearized(LinearizedProblem(p.solution, ScalarField(g, rho0)), tol=tol)
    return z.data[0]


def dU_lipschitz_report(pairs, c: Coupling, t0: float = 0.0, tol: float = 1e-10, dcc=None,
                        alpha: float = 0.5, n_slices: int = 4, seed: int = 0, **kw) -> dict:
    """``‖K(m1) - K(m2)‖ / d1(m1, m2)`` per pair with a mixed Hölder surrogate.

    The surrogate is the larger of the ``2+α`` norm in x over sampled columns and
    the ``1+α`` norm in y over sampled rows (sup norm when ``dcc`` is absent).
    """
    rng = np.random.Generator(np.random.Philox(seed))
    kernels = {}

    def kern(m):
        key = id(m)
        if key not in kernels:
            kernels[key] = eval_U(t0, m, c, tol=tol, **kw).kernel(tol)
        return kernels[key]

    out = []
    excluded = 0
    for m1, m2 in pairs:
        d1 = d1_value(m1.values, m2.values, m1.grid)
        if d1 < 1e-10:
            excluded += 1
            continue
        diff = kern(m1).K - kern(m2).K
        g = m1.grid
        if dcc is None:
            norm = float(np.max(np.abs(diff)))
        else:
            idx = rng.choice(g.size, size=min(n_slices, g.size), replace=False)
            norm = max(max(holder_norm(ScalarField(g, diff[:, i].reshape(g.shape)), alpha, 2, dcc).norm,
                           holder_norm(ScalarField(g, diff[i].reshape(g.shape)), alpha, 1, dcc).norm)
                       for i in idx)
        out.append({"d1": d1, "norm": norm, "ratio": norm / d1})
    vals = [r["ratio"] for r in out]
    spread = (max(vals) - min(vals)) / max(vals) if vals and max(vals) > 0 else 0.0
    return {"pairs": out, "excluded": excluded, "max_ratio": max(vals) if vals else math.nan,
            "relative_spread": spread}
