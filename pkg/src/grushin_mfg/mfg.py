"""Forward–backward fixed point for the Grushin MFG system."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .ccmetric import d1_value
from .coupling import Coupling
from .dual import sup_dual_norm
from .grid import ScalarField, SpaceTimeField, TorusGrid, as_density, holder_norm, x_derivatives
from .hjb import hjb_direct
from .kfp import forward_sweep
from .schemes import godunov_drift

log = logging.getLogger(__name__)


class FixedPointNotConverged(RuntimeError):
    def __init__(self, history):
        super().__init__(f"fixed point did not converge in {len(history)} iterations; "
                         f"last residual {history[-1]:.3g}")
        self.history = list(history)


def default_nt(grid: TorusGrid) -> int:
    return 2 * max(grid.n1, grid.n2)


def time_mesh(grid: TorusGrid, t0: float, T: float, nt: int | None, dt: float | None):
    """Resolve ``(nt, dt)``; by default ``dt = T / (2 max(n1, n2))`` on the full horizon."""
    if nt is None:
        if dt is None:
            dt = T / default_nt(grid)
        nt = int(round((T - t0) / dt))
    if nt < 2:
        raise ValueError(f"time mesh on [{t0}, {T}] has fewer than 2 steps")
    return nt, (T - t0) / nt


def bump_density(grid: TorusGrid, center=(0.3, 0.4), width: float = 0.1,
                 floor: float = 0.05) -> ScalarField:
    X1, X2 = grid.mesh()
    d1 = np.minimum(np.abs(X1 - center[0]), 1 - np.abs(X1 - center[0]))
    d2 = np.minimum(np.abs(X2 - center[1]), 1 - np.abs(X2 - center[1]))
    return as_density(grid, floor + np.exp(-(d1**2 + d2**2) / (2 * width**2)))


def default_m0(grid: TorusGrid) -> ScalarField:
    return bump_density(grid)


@dataclass(frozen=True, eq=False)
class MFGSolution:
    u: SpaceTimeField
    m: SpaceTimeField
    iterations: int
    residual_history: list
    damping: float
    coupling: Coupling = field(repr=False)
    warnings: list = field(default_factory=list)

    @property
    def grid(self) -> TorusGrid:
        return self.u.grid

    @property
    def t0(self) -> float:
        return self.u.t0

    @property
    def T(self) -> float:
        return self.u.T

    @property
    def nt(self) -> int:
        return self.u.nt

    @property
    def dt(self) -> float:
        return self.u.dt

    @property
    def m0(self) -> ScalarField:
        return ScalarField(self.grid, self.m.data[0], density=False)

    def drift(self):
        return godunov_drift(self.grid, self.u.data)


def phi_map(grid: TorusGrid, dt: float, m0: np.ndarray, mu: np.ndarray, c: Coupling):
    """One application of the fixed-point map: HJB against ``mu``, KFP from ``m0``."""
    u = hjb_direct(grid, dt, c.F(mu), c.G(mu[-1]))
    W = godunov_drift(grid, u)
    m = forward_sweep(grid, dt, mu.shape[0] - 1, m0, W, density=True)
    return u, m


def solve_mfg(t0: float, m0: ScalarField, c: Coupling, theta: float = 0.5, tol: float = 1e-8,
              max_iter: int = 200, T: float = 1.0, nt: int | None = None,
              dt: float | None = None, init="frozen") -> MFGSolution:
    """Damped Picard iteration ``μ ← (1-θ)μ + θΦ(μ)``.

    The residual after update ``n`` is the larger of ``sup_t ‖Φ(μ_n) - Φ(μ_{n-1})‖``
    in the dual-dictionary norm and the sup-norm change of the value function;
    the dual norm alone under-reports the error in ``u`` when ``Φ`` is strongly
    contracting.  ``iterations`` counts damped updates.  ``init`` is
    ``"frozen"`` (m0 at every time), ``"uniform"`` or an explicit path array.
    """
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    if m0.grid != c.grid:
        raise ValueError("initial density and coupling live on different grids")
    g = m0.grid
    if m0.values.min() < 0 or abs(m0.mass() - 1) > 1e-12:
        raise ValueError("m0 must be a probability density")
    nt, dt = time_mesh(g, t0, T, nt, dt)
    if isinstance(init, str):
        if init == "frozen":
            mu = np.broadcast_to(m0.values, (nt + 1,) + g.shape).copy()
        elif init == "uniform":
            mu = np.ones((nt + 1,) + g.shape)
            mu[0] = m0.values
        else:
            raise ValueError(f"unknown init {init!r}")
    else:
        mu = np.array(init, float)
    u, m = phi_map(g, dt, m0.values, mu, c)
    history = []
    warnings = []
    for it in range(1, max_iter + 1):
        mu = (1 - theta) * mu + theta * m
        u_new, m_new = phi_map(g, dt, m0.values, mu, c)
        res = max(sup_dual_norm(g, m_new - m), float(np.max(np.abs(u_new - u))))
        history.append(res)
        u, m = u_new, m_new
        if it > 4 and history[-1] > history[-2] * (1 + 1e-6) and history[-1] > tol:
            warnings.append(f"residual increased at iteration {it}")
        if res <= tol:
            break
    else:
        raise FixedPointNotConverged(history)
    if warnings:
        log.warning("non-monotone fixed-point residual: %s", "; ".join(warnings))
    return MFGSolution(SpaceTimeField(g, t0, T, u), SpaceTimeField(g, t0, T, m), it,
                       history, theta, c, warnings)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def _check_same_mesh(s1: MFGSolution, s2: MFGSolution):
    if s1.grid != s2.grid or s1.nt != s2.nt or s1.t0 != s2.t0 or s1.T != s2.T:
        raise ValueError("solutions live on different meshes")


def lasry_lions_gap(s1: MFGSolution, s2: MFGSolution) -> dict:
    """Both sides of ``∫∫|D_X(u¹-u²)|²(m¹+m²) <= C ‖D_X(u¹-u²)(t0)‖_∞ d1(m0¹, m0²)``."""
    _check_same_mesh(s1, s2)
    g = s1.grid
    du = s1.u.data - s2.u.data
    x1, x2 = x_derivatives(g, du)
    dens = (x1**2 + x2**2) * (s1.m.data + s2.m.data)
    per_t = g.cell_area * dens.sum(axis=(1, 2))
    lhs = float(s1.dt * (per_t.sum() - 0.5 * (per_t[0] + per_t[-1])))
    grad0 = float(np.max(np.hypot(x1[0], x2[0])))
    d1 = d1_value(s1.m.data[0], s2.m.data[0], g) if grad0 > 0 else 0.0
    rhs = grad0 * d1
    C = lhs / rhs if rhs > 0 else 0.0
    return {"lhs": lhs, "rhs": rhs, "C_report": C, "d1_m0": d1, "grad0": grad0}


def sup_metric(s1: MFGSolution, s2: MFGSolution, dcc, alpha: float = 0.5,
               stride: int = 4) -> float:
    """``sup_t d1(m¹(t), m²(t)) + ‖u¹(t) - u²(t)‖_{2+α}`` over every ``stride``-th slice."""
    _check_same_mesh(s1, s2)
    g = s1.grid
    best = 0.0
    ks = sorted(set(range(0, s1.nt + 1, stride)) | {s1.nt})
    for k in ks:
        d1 = d1_value(s1.m.data[k], s2.m.data[k], g)
        un = holder_norm(ScalarField(g, s1.u.data[k] - s2.u.data[k]), alpha, 2, dcc).norm
        best = max(best, d1 + un)
    return best


def lipschitz_experiment(pairs, c: Coupling, dcc, t0: float = 0.0, tol: float = 1e-10,
                         stride: int = 4, **solve_kw) -> dict:
    """Ratios ``sup-metric / d1(m0¹, m0²)`` per pair; pairs with d1 < 1e-10 are excluded."""
    ratios = []
    excluded = 0
    cache = {}

    def solve(m):
        key = id(m)
        if key not in cache:
            cache[key] = solve_mfg(t0, m, c, tol=tol, **solve_kw)
        return cache[key]

    for ma, mb in pairs:
        d0 = d1_value(ma.values, mb.values, ma.grid)
        if d0 < 1e-10:
            excluded += 1
            continue
        num = sup_metric(solve(ma), solve(mb), dcc, stride=stride)
        ratios.append({"d1_m0": d0, "sup_metric": num, "ratio": num / d0})
    vals = [r["ratio"] for r in ratios]
    spread = (max(vals) - min(vals)) / max(vals) if vals else math.nan
    return {"pairs": ratios, "excluded": excluded, "max_ratio": max(vals) if vals else math.nan,
            "relative_spread": spread}
