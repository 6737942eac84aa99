"""Linearized forward–backward system around an MFG solution and the kernel K.

The discrete system is the exact derivative of the discrete MFG scheme:

    z^k     = L⁻¹[z^{k+1} - dt T_{W^{k+1}} z^{k+1} + dt (K_F ρ̄^k + b^k)],
    z^N     = K_G ρ̄^N + z_T_extra,
    ρ^{k+1} = (I - dt T*_{W^{k+1}}) L⁻¹ρ^k - dt T*_{δW(z^{k+1})} L⁻¹m^k + dt div(c^{k+1}),

where ``W`` is the Godunov drift of the base value function and ``δW`` its
directional derivative.  Finite differences of ``U`` in ``m0`` therefore
converge to ``K`` at rate O(s) with no discretization mismatch.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dual import sup_dual_norm
from .grid import ScalarField, SpaceTimeField, TorusGrid, holder_norm, x_derivatives
from .hjb import backward_sweep
from .kfp import forward_sweep
from .mfg import MFGSolution
from .schemes import (diffusion_for, drift_variation, face_divergence, thread_cap,
                      transport_adjoint)

MAX_KERNEL_NODES = 24 * 24
BATCH = 128


class LinearizedNotConverged(RuntimeError):
    def __init__(self, history):
        super().__init__(f"linearized fixed point did not converge in {len(history)} iterations; "
                         f"last gap {history[-1]:.3g}")
        self.history = list(history)


class KernelBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LinearizedProblem:
    """Data of the linearized system around ``base``; ``None`` fields mean zero."""

    base: MFGSolution
    rho0: ScalarField
    b: SpaceTimeField | None = None
    cvec: tuple | None = None
    z_T_extra: ScalarField | None = None

    def __post_init__(self):
        g = self.base.grid
        if self.rho0.grid != g:
            raise ValueError("rho0 does not live on the base grid")
        if self.b is not None and (self.b.grid != g or self.b.nt != self.base.nt):
            raise ValueError("source b does not match the base mesh")
        if self.z_T_extra is not None and self.z_T_extra.grid != g:
            raise ValueError("z_T_extra does not live on the base grid")
        if self.cvec is not None:
            shape = (self.base.nt + 1,) + g.shape
            for comp in self.cvec:
                arr = comp.data if isinstance(comp, SpaceTimeField) else np.asarray(comp)
                if arr.shape != shape:
                    raise ValueError("cvec does not match the base mesh")

    def source_rho(self) -> np.ndarray | None:
        if self.cvec is None:
            return None
        c1, c2 = (x.data if isinstance(x, SpaceTimeField) else np.asarray(x, float) for x in self.cvec)
        return face_divergence(self.base.grid, c1, c2)


class _Base:
    """Quantities of the base solution shared read-only by all linear solves."""

    def __init__(self, base: MFGSolution):
        g = base.grid
        self.grid = g
        self.nt = base.nt
        self.dt = base.dt
        self.u = base.u.data
        self.W = base.drift()
        L = diffusion_for(g, base.dt)
        self.Lm = L.solve(base.m.data)  # L⁻¹ m^k for every k
        self.kf = base.coupling.kernel_f
        self.kg = base.coupling.kernel_g


def _picard(bs: _Base, rho0: np.ndarray, b=None, div_c=None, zT_extra=None,
            tol: float = 1e-8, max_iter: int = 200, theta: float = 0.5):
    """Damped Picard for a batch ``rho0`` of shape ``(B, n1, n2)``.

    ``b`` and ``div_c`` have shape ``(nt+1, n1, n2)`` and are shared by the batch.
    """
    g, nt, dt = bs.grid, bs.nt, bs.dt
    u_next = bs.u[1:, None]
    Lm_prev = bs.Lm[:-1, None]

    def backward(rbar):
        f = bs.kf.apply(rbar)
        if b is not None:
            f = f + b[:, None]
        zT = bs.kg.apply(rbar[-1])
        if zT_extra is not None:
            zT = zT + zT_extra
        return backward_sweep(g, dt, nt, zT, bs.W, f, check_cfl=False)

    def forward(z):
        src = np.zeros((nt + 1,) + z.shape[1:])
        src[1:] = -transport_adjoint(g, drift_variation(g, u_next, z[1:]), Lm_prev)
        if div_c is not None:
            src = src + div_c[:, None]
        return forward_sweep(g, dt, nt, rho0, bs.W, src, check_cfl=False)

    rho = forward(np.zeros((nt + 1,) + rho0.shape))
    rbar = rho
    z = backward(rbar)
    rho = forward(z)
    history = []
    for it in range(1, max_iter + 1):
        rbar = (1 - theta) * rbar + theta * rho
        z_new = backward(rbar)
        rho_new = forward(z_new)
        gap = max(sup_dual_norm(g, rho_new - rho), float(np.max(np.abs(z_new - z))))
        history.append(gap)
        z, rho = z_new, rho_new
        if gap <= tol:
            return z, rho, it, history
    raise LinearizedNotConverged(history)


def solve_linearized(p: LinearizedProblem, tol: float = 1e-8, max_iter: int = 200,
                     theta: float = 0.5) -> tuple[SpaceTimeField, SpaceTimeField]:
    """Solve the linearized system; returns ``(z, rho)``.

    The iterate gap is the larger of the dual-dictionary change of ``ρ`` and the
    sup-norm change of ``z``, matching the nonlinear stopping rule.
    """
    base = p.base
    bs = _Base(base)
    b = p.b.data if p.b is not None else None
    extra = p.z_T_extra.values if p.z_T_extra is not None else None
    z, rho, _, _ = _picard(bs, p.rho0.values[None], b, p.source_rho(), extra, tol, max_iter, theta)
    g = base.grid
    return (SpaceTimeField(g, base.t0, base.T, z[:, 0]),
            SpaceTimeField(g, base.t0, base.T, rho[:, 0]))


# ---------------------------------------------------------------------------
# Kernel K
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KernelK:
    """``K[x, y] = z(t0, x; δ_y)`` as an ``(n1 n2) x (n1 n2)`` matrix (row = x)."""

    grid: TorusGrid
    t0: float
    m0: ScalarField
    K: np.ndarray
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """``Σ_y K(·, y) ρ(y) h1 h2`` as a grid field."""
        rho = np.asarray(rho, float)
        flat = rho.reshape(rho.shape[:-2] + (self.grid.size,))
        return (self.grid.cell_area * flat @ self.K.T).reshape(rho.shape)

    def offset(self) -> np.ndarray:
        return self.grid.cell_area * self.K @ self.m0.values.ravel()

    def normalize(self) -> "KernelK":
        if self.normalized:
            return self
        return KernelK(self.grid, self.t0, self.m0, self.K - self.offset()[:, None], True, dict(self.meta))

    def column(self, y: int) -> ScalarField:
        return ScalarField(self.grid, self.K[:, y].reshape(self.grid.shape))

    def row(self, x: int) -> ScalarField:
        return ScalarField(self.grid, self.K[x].reshape(self.grid.shape))

    def save(self, path) -> tuple[Path, Path]:
        """Row-major little-endian float64 matrix plus a JSON sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.K.astype("<f8").tofile(path)
        side = path.with_suffix(path.suffix + ".json")
        side.write_text(json.dumps({
            "t0": self.t0, "n1": self.grid.n1, "n2": self.grid.n2,
            "profile": self.grid.profile.value, "normalized": self.normalized,
            "dtype": "float64-le", "order": "row-major", "rows": "x", "cols": "y",
            **self.meta}, indent=2))
        return path, side

    @classmethod
    def load(cls, path, m0: ScalarField) -> "KernelK":
        path = Path(path)
        side = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        grid = m0.grid
        if (side["n1"], side["n2"]) != grid.shape:
            raise ValueError("kernel file does not match the grid of m0")
        K = np.fromfile(path, dtype="<f8").reshape(grid.size, grid.size)
        meta = {k: v for k, v in side.items() if k not in
                ("t0", "n1", "n2", "profile", "normalized", "dtype", "order", "rows", "cols")}
        return cls(grid, side["t0"], m0, K, side["normalized"], meta)


def kernel_cost(grid: TorusGrid, nt: int, iterations: int = 25) -> dict:
    """Rough cost of the full column sweep."""
    n = grid.size
    return {"linear_solves": n, "sweeps": 2 * n * iterations * nt,
            "matrix_bytes": 8 * n * n}


def build_kernel_K(base: MFGSolution, tol: float = 1e-8, max_iter: int = 200,
                   normalize: bool = True, max_nodes: int = MAX_KERNEL_NODES,
                   batch: int = BATCH) -> KernelK:
    """One linearized solve per grid Dirac ``δ_y = 1/h² at y``, at tolerance ``tol/10``.

    Columns are solved in fixed batches (so results do not depend on the
    thread count) and batches run concurrently.
    """
    g = base.grid
    if g.size > max_nodes:
        cost = kernel_cost(g, base.nt)
        raise KernelBudgetExceeded(
            f"kernel sweep on {g.n1}x{g.n2} needs {cost['linear_solves']} linearized solves "
            f"(~{cost['sweeps']:.3g} time sweeps, {cost['matrix_bytes'] / 2**20:.1f} MiB matrix); "
            f"limit is {max_nodes} nodes")
    bs = _Base(base)
    n = g.size
    K = np.empty((n, n))
    starts = list(range(0, n, batch))

    def run(start):
        ys = np.arange(start, min(start + batch, n))
        rho0 = np.zeros((len(ys), n))
        rho0[np.arange(len(ys)), ys] = 1.0 / g.cell_area
        z, _, it, _ = _picard(bs, rho0.reshape((len(ys),) + g.shape), tol=tol / 10,
                              max_iter=max_iter)
        K[:, ys] = z[0].reshape(len(ys), n).T
        return it

    workers = thread_cap() or min(len(starts), os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        its = list(ex.map(run, starts))
    kk = KernelK(g, base.t0, base.m0, K, False,
                 {"tol": tol / 10, "max_iterations": max(its), "nt": base.nt, "T": base.T})
    return kk.normalize() if normalize else kk


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def energy_term(z: SpaceTimeField, m: SpaceTimeField) -> float:
    """``∫∫ |D_X z|² m dx dt`` (trapezoid in time); nonnegative for densities ``m``."""
    x1, x2 = x_derivatives(z.grid, z.data)
    per_t = z.grid.cell_area * np.sum((x1**2 + x2**2) * m.data, axis=(1, 2))
    return float(z.dt * (per_t.sum() - 0.5 * (per_t[0] + per_t[-1])))


def amplitude_sweep(base: MFGSolution, rho0: ScalarField, scales=(1e-3, 1e-2, 1e-1, 1.0),
                    tol: float = 1e-12) -> dict:
    """Log-log slopes of ``sup_t`` norms of ``z`` and ``ρ`` against the amplitude of ``ρ0``."""
    g = base.grid
    zs, rs, amps = [], [], []
    for s in scales:
        r0 = ScalarField(g, s * rho0.values)
        z, rho = solve_linearized(LinearizedProblem(base, r0), tol=tol * s)
        amps.append(sup_dual_norm(g, r0.values))
        zs.append(float(np.max(np.abs(z.data))))
        rs.append(sup_dual_norm(g, rho.data))
    la = np.log(amps)
    return {"slope_z": float(np.polyfit(la, np.log(zs), 1)[0]),
            "slope_rho": float(np.polyfit(la, np.log(rs), 1)[0]),
            "amplitudes": amps, "z_sup": zs, "rho_dual": rs}


def kernel_regularity(k: KernelK, dcc, alpha: float = 0.5, n_slices: int = 4,
                      seed: int = 0) -> dict:
    """Max ``2+α`` Hölder surrogate over sampled rows (x fixed) and columns (y fixed)."""
    g = k.grid
    rng = np.random.Generator(np.random.Philox(seed))
    idx = rng.choice(g.size, size=min(n_slices, g.size), replace=False)
    rows = max(holder_norm(k.row(int(i)), alpha, 2, dcc).norm for i in idx)
    cols = max(holder_norm(k.column(int(i)), alpha, 2, dcc).norm for i in idx)
    return {"x_slot": cols, "y_slot": rows, "norm": max(rows, cols)}


def representation_defects(base: MFGSolution, k: KernelK, n: int = 10, seed: int = 0,
                           tol: float = 1e-8) -> list[float]:
    """``‖z(t0; ρ0) - Kρ0‖_∞`` for ``n`` random zero-mass smooth ``ρ0``."""
    g = base.grid
    rng = np.random.Generator(np.random.Philox(seed))
    X1, X2 = g.mesh()
    out = []
    for _ in range(n):
        v = np.zeros(g.shape)
        for _ in range(4):
            k1, k2 = rng.integers(-3, 4, size=2)
            v += rng.normal() * np.cos(2 * math.pi * (k1 * X1 + k2 * X2) + rng.uniform(0, 2 * math.pi))
        v -= v.mean()
        z, _ = solve_linearized(LinearizedProblem(base, ScalarField(g, v)), tol=tol)
        out.append(float(np.max(np.abs(z.data[0] - k.apply(v)))))
    return out
