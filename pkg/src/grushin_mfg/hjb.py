"""Backward solvers: linear degenerate equation and the quadratic HJB."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coupling import Coupling
from .grid import ScalarField, SpaceTimeField, TorusGrid, holder_norm, holder_seminorm
from .schemes import (CFLViolation, SplitDrift, diffusion_for, godunov_drift,
                      godunov_hamiltonian, transport)

MODES = ("Direct", "HopfCole")
W_FLOOR = 1e-300


class PositivityGuardTriggered(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Linear backward equation
# ---------------------------------------------------------------------------

def backward_sweep(grid: TorusGrid, dt: float, nt: int, zT: np.ndarray,
                   W: SplitDrift | None = None, f: np.ndarray | None = None,
                   check_cfl: bool = True) -> np.ndarray:
    """``z^k = L⁻¹[z^{k+1} - dt T_{W^{k+1}} z^{k+1} + dt f^k]`` from ``z^nt = zT``.

    ``W`` and ``f`` carry a leading time axis of length ``nt+1``; ``zT`` may carry
    extra batch axes, which broadcast against ``f`` slices.
    """
    L = diffusion_for(grid, dt)
    if W is not None and check_cfl:
        c = W.cfl(grid, dt)
        if c > 1.0:
            raise CFLViolation(c)
    zT = np.asarray(zT, float)
    out = np.empty((nt + 1,) + zT.shape)
    out[nt] = zT
    z = zT
    for k in range(nt - 1, -1, -1):
        r = z.copy()
        if W is not None:
            r = r - dt * transport(grid, W[k + 1], z)
        if f is not None:
            r = r + dt * f[k]
        z = L.solve(r)
        out[k] = z
    return out


@dataclass(frozen=True, eq=False)
class BackwardLinearProblem:
    """``-∂_t z - Δ_X z + V·D_X z = f`` on ``[t0, T]`` with ``z(T) = z_T``.

    ``V`` is a pair of frame components ``(V1, V2)`` as space-time fields, or a
    :class:`SplitDrift` whose arrays carry a time axis; ``None`` means zero.
    """

    z_T: ScalarField
    t0: float
    T: float
    nt: int
    V: object = None
    f: SpaceTimeField | None = None

    def __post_init__(self):
        if self.nt < 2:
            raise ValueError("nt must be at least 2")
        if not self.T > self.t0:
            raise ValueError("need T > t0")
        if self.f is not None and (self.f.nt != self.nt or self.f.grid != self.z_T.grid):
            raise ValueError("source mesh does not match the problem")

    @property
    def grid(self) -> TorusGrid:
        return self.z_T.grid

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.nt

    def split_drift(self) -> SplitDrift | None:
        return as_split(self.grid, self.V, self.nt)


def as_split(grid: TorusGrid, V, nt: int) -> SplitDrift | None:
    if V is None or isinstance(V, SplitDrift):
        return V
    V1, V2 = V
    d1 = V1.data if isinstance(V1, SpaceTimeField) else np.asarray(V1, float)
    d2 = V2.data if isinstance(V2, SpaceTimeField) else np.asarray(V2, float)
    if d1.shape != (nt + 1,) + grid.shape or d2.shape != d1.shape:
        raise ValueError("drift mesh does not match the problem")
    return SplitDrift.from_frame(grid, d1, d2)


def solve_backward_linear(p: BackwardLinearProblem) -> SpaceTimeField:
    g = p.grid
    f = p.f.data if p.f is not None else None
    z = backward_sweep(g, p.dt, p.nt, p.z_T.values, p.split_drift(), f)
    return SpaceTimeField(g, p.t0, p.T, z)


# ---------------------------------------------------------------------------
# Quadratic HJB
# ---------------------------------------------------------------------------

def hjb_direct(grid: TorusGrid, dt: float, Fpath: np.ndarray, uT: np.ndarray,
               order: int = 1) -> np.ndarray:
    """``u^k = L⁻¹[u^{k+1} + dt(F^k - H_G(u^{k+1}))]`` with the Godunov Hamiltonian."""
    nt = Fpath.shape[0] - 1
    L = diffusion_for(grid, dt)
    out = np.empty_like(Fpath)
    out[nt] = uT
    u = uT
    for k in range(nt - 1, -1, -1):
        c = godunov_drift(grid, u).cfl(grid, dt)
        if c > 1.0:
            raise CFLViolation(c)
        u = L.solve(u + dt * (Fpath[k] - godunov_hamiltonian(grid, u, order)))
        out[k] = u
    return out


def hjb_hopf_cole(grid: TorusGrid, dt: float, Fpath: np.ndarray, GT: np.ndarray) -> np.ndarray:
    """Lie splitting for ``-∂_t w - Δ_X w + ½ F w = 0``; returns ``u = -2 log w``."""
    nt = Fpath.shape[0] - 1
    L = diffusion_for(grid, dt)
    w = np.exp(-0.5 * GT)
    out = np.empty_like(Fpath)
    out[nt] = GT
    for k in range(nt - 1, -1, -1):
        w = L.solve(np.exp(-0.5 * dt * Fpath[k]) * w)
        if np.min(w) < W_FLOOR:
            raise PositivityGuardTriggered(f"w fell below {W_FLOOR} at step {k}; mesh is unstable")
        out[k] = -2.0 * np.log(w)
    return out


def solve_hjb(mpath: SpaceTimeField, c: Coupling, mode: str = "Direct",
              order: int = 1) -> SpaceTimeField:
    """Backward HJB ``-∂_t u - Δ_X u + ½|D_X u|² = F(x, m(t))``, ``u(T) = G(x, m(T))``."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mpath.grid != c.grid:
        raise ValueError("density path and coupling live on different grids")
    g = mpath.grid
    F = c.F(mpath.data)
    GT = c.G(mpath.data[-1])
    if mode == "Direct":
        u = hjb_direct(g, mpath.dt, F, GT, order)
    else:
        u = hjb_hopf_cole(g, mpath.dt, F, GT)
    return SpaceTimeField(g, mpath.t0, mpath.T, u)


def hjb_residual(u: SpaceTimeField, mpath: SpaceTimeField, c: Coupling) -> np.ndarray:
    """Centered-difference residual of the continuous HJB on interior time nodes."""
    from .grid import laplacian_array, x_derivatives

    g = u.grid
    d = u.data
    dtu = (d[2:] - d[:-2]) / (2 * u.dt)
    mid = d[1:-1]
    x1, x2 = x_derivatives(g, mid)
    res = -dtu - laplacian_array(g, mid) + 0.5 * (x1**2 + x2**2) - c.F(mpath.data[1:-1])
    return res


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def lipschitz_constant(values: np.ndarray, dist: np.ndarray) -> float:
    return holder_seminorm(values, dist, 1.0)


def lipschitz_propagation_check(grid: TorusGrid, zT: np.ndarray, dcc, V=None,
                                T: float = 1.0, nt: int | None = None,
                                stride: int = 1) -> float:
    """``sup_t Lip(z(t)) / Lip(z_T)`` for the homogeneous backward equation (0 for constant data)."""
    dist = dcc.dist if hasattr(dcc, "dist") else np.asarray(dcc)
    nt = nt or 2 * max(grid.n1, grid.n2)
    L0 = lipschitz_constant(zT, dist)
    if L0 == 0.0:
        return 0.0
    W = as_split(grid, V, nt)
    z = backward_sweep(grid, T / nt, nt, zT, W)
    return max(lipschitz_constant(z[k], dist) for k in range(0, nt + 1, stride)) / L0


def time_holder_table(z: SpaceTimeField, dcc, alpha: float = 0.5, beta: float = 0.4,
                      order: int = 2, stride: int = 4) -> dict:
    """Ratios ``‖z(t')-z(t)‖_{order+α} / |t'-t|^β`` on ``[t0, T - 4Δt]``."""
    last = z.nt - 4
    ks = list(range(0, last + 1, stride))
    ratios = []
    for i, k in enumerate(ks):
        for k2 in ks[i + 1:]:
            diff = ScalarField(z.grid, z.data[k2] - z.data[k])
            n = holder_norm(diff, alpha, order, dcc).norm
            ratios.append(n / ((k2 - k) * z.dt) ** beta)
    return {"beta": beta, "alpha": alpha, "max_ratio": max(ratios), "n_pairs": len(ratios)}


def schauder_ratio(u: SpaceTimeField, GT: np.ndarray, dcc, alpha: float = 0.5,
                   stride: int = 4) -> float:
    """Surrogate of ``‖u‖_{1+α/2,2+α} / ‖G‖_{2+α}``.

    The parabolic norm is taken as the sup over sampled slices of the spatial
    ``2+α`` norm plus the ``(1+α/2)``-Hölder quotient in time of the sup norm.
    """
    g = u.grid
    gnorm = holder_norm(ScalarField(g, GT), alpha, 2, dcc).norm
    if gnorm == 0:
        raise ValueError("terminal datum has zero norm")
    ks = list(range(0, u.nt + 1, stride))
    space = max(holder_norm(u[k], alpha, 2, dcc).norm for k in ks)
    tq = 0.0
    for i, k in enumerate(ks):
        for k2 in ks[i + 1:]:
            tq = max(tq, np.max(np.abs(u.data[k2] - u.data[k])) / ((k2 - k) * u.dt) ** (1 + alpha / 2))
    return (space + tq) / gnorm
