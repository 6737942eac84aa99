"""Discrete building blocks shared by the backward and forward solvers.

Conventions: arrays are ``(n1, n2)`` or batched ``(..., n1, n2)``; velocities
are Euclidean components ``(w1, w2)`` with ``w2 = a(x1) · (frame component)``.
A split drift stores ``W+ >= 0`` and ``W- <= 0`` per direction.  The backward
transport operator is ``T_W z = Σ_d W+_d D-_d z + W-_d D+_d z`` and its
transpose is ``T*_W m = -Σ_d D+_d(W+_d m) + D-_d(W-_d m)``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import TorusGrid


class CFLViolation(ValueError):
    def __init__(self, number: float):
        super().__init__(f"explicit transport violates CFL: dt*sum|W|/h = {number:.4g} > 1")
        self.number = number


def thread_cap() -> int | None:
    val = os.environ.get("GRUSHIN_MFG_THREADS")
    return int(val) if val else None


# ---------------------------------------------------------------------------
# One-sided differences
# ---------------------------------------------------------------------------

def dplus(f, h, axis):
    return (np.roll(f, -1, axis=axis) - f) / h


def dminus(f, h, axis):
    return (f - np.roll(f, 1, axis=axis)) / h


def dplus2(f, h, axis):
    return (-np.roll(f, -2, axis=axis) + 4 * np.roll(f, -1, axis=axis) - 3 * f) / (2 * h)


def dminus2(f, h, axis):
    return (3 * f - 4 * np.roll(f, 1, axis=axis) + np.roll(f, 2, axis=axis)) / (2 * h)


# ---------------------------------------------------------------------------
# Implicit diffusion
# ---------------------------------------------------------------------------

class ImplicitDiffusion:
    """Solver for ``(I - dt Δ_X) y = r`` with the compact Grushin Laplacian.

    ``Δ_X`` diagonalises under the FFT in x2 (a depends on x1 only); each
    x2-mode leaves a periodic tridiagonal system in x1 whose inverse is
    precomputed.
    """

    def __init__(self, grid: TorusGrid, dt: float):
        self.grid = grid
        self.dt = dt
        n1, n2 = grid.shape
        k = np.arange(n2 // 2 + 1)
        mu = (4.0 / grid.h2**2) * np.sin(np.pi * k / n2) ** 2  # -D22 eigenvalues
        a2 = grid.a**2
        D11 = (np.roll(np.eye(n1), 1, axis=1) - 2 * np.eye(n1) + np.roll(np.eye(n1), -1, axis=1)) / grid.h1**2
        mats = np.eye(n1)[None] - dt * D11[None] + dt * (a2[None, :, None] * np.eye(n1)[None]) * mu[:, None, None]
        self.inv = np.linalg.inv(mats)  # (modes, n1, n1), real

    def solve(self, r: np.ndarray) -> np.ndarray:
        n2 = self.grid.n2
        rh = np.swapaxes(np.fft.rfft(r, axis=-1), -1, -2)[..., None]
        out = (self.inv @ rh)[..., 0]
        return np.fft.irfft(np.swapaxes(out, -1, -2), n=n2, axis=-1)


@lru_cache(maxsize=32)
def diffusion(n1: int, n2: int, profile: str, dt: float) -> ImplicitDiffusion:
    return ImplicitDiffusion(TorusGrid(n1, n2, profile), dt)


def diffusion_for(grid: TorusGrid, dt: float) -> ImplicitDiffusion:
    return diffusion(grid.n1, grid.n2, grid.profile.value, float(dt))


# ---------------------------------------------------------------------------
# Split drift and transport
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SplitDrift:
    """Upwind-split Euclidean velocity; each array is ``(..., n1, n2)``."""

    p1: np.ndarray
    m1: np.ndarray
    p2: np.ndarray
    m2: np.ndarray

    @classmethod
    def from_velocity(cls, w1: np.ndarray, w2: np.ndarray) -> "SplitDrift":
        return cls(np.maximum(w1, 0), np.minimum(w1, 0), np.maximum(w2, 0), np.minimum(w2, 0))

    @classmethod
    def from_frame(cls, grid: TorusGrid, b1: np.ndarray, b2: np.ndarray) -> "SplitDrift":
        return cls.from_velocity(np.asarray(b1, float), grid.a[:, None] * np.asarray(b2, float))

    @classmethod
    def zeros(cls, shape) -> "SplitDrift":
        z = np.zeros(shape)
        return cls(z, z, z, z)

    def __getitem__(self, k) -> "SplitDrift":
        return SplitDrift(self.p1[k], self.m1[k], self.p2[k], self.m2[k])

    def cfl(self, grid: TorusGrid, dt: float) -> float:
        s = (self.p1 - self.m1) / grid.h1 + (self.p2 - self.m2) / grid.h2
        return float(dt * np.max(s, initial=0.0))

    def sup(self) -> float:
        return float(max(np.max(np.abs(x), initial=0.0) for x in (self.p1, self.m1, self.p2, self.m2)))


def transport(grid: TorusGrid, W: SplitDrift, z: np.ndarray) -> np.ndarray:
    """``T_W z``: upwind ``w · ∇z`` for the backward equation."""
    h1, h2 = grid.h1, grid.h2
    return (W.p1 * dminus(z, h1, -2) + W.m1 * dplus(z, h1, -2)
            + W.p2 * dminus(z, h2, -1) + W.m2 * dplus(z, h2, -1))


def transport_adjoint(grid: TorusGrid, W: SplitDrift, m: np.ndarray) -> np.ndarray:
    """``T*_W m``: exact transpose of :func:`transport`; equals ``-div(m w)`` in flux form."""
    h1, h2 = grid.h1, grid.h2
    return -(dplus(W.p1 * m, h1, -2) + dminus(W.m1 * m, h1, -2)
             + dplus(W.p2 * m, h2, -1) + dminus(W.m2 * m, h2, -1))


def face_divergence(grid: TorusGrid, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    """``div_X c`` from node values averaged to faces (centered, conservative)."""
    a = grid.a[:, None]
    f1 = 0.5 * (c1 + np.roll(c1, -1, axis=-2))
    f2 = 0.5 * (a * c2 + np.roll(a * c2, -1, axis=-1))
    return dminus(f1, grid.h1, -2) + dminus(f2, grid.h2, -1)


# ---------------------------------------------------------------------------
# Godunov Hamiltonian for H(p) = |p|^2 / 2
# ---------------------------------------------------------------------------

def _one_sided(grid: TorusGrid, u: np.ndarray, order: int):
    if order == 1:
        fp, fm = dplus, dminus
    elif order == 2:
        fp, fm = dplus2, dminus2
    else:
        raise ValueError("order must be 1 or 2")
    return (fp(u, grid.h1, -2), fm(u, grid.h1, -2), fp(u, grid.h2, -1), fm(u, grid.h2, -1))


def godunov_hamiltonian(grid: TorusGrid, u: np.ndarray, order: int = 1) -> np.ndarray:
    """``½ Σ_d c_d [min(D+u,0)^2 + max(D-u,0)^2]`` with ``c_1 = 1``, ``c_2 = a^2``."""
    a2 = grid.a[:, None] ** 2
    p1, m1, p2, m2 = _one_sided(grid, u, order)
    h1 = np.minimum(p1, 0) ** 2 + np.maximum(m1, 0) ** 2
    h2 = np.minimum(p2, 0) ** 2 + np.maximum(m2, 0) ** 2
    return 0.5 * (h1 + a2 * h2)


def godunov_drift(grid: TorusGrid, u: np.ndarray) -> SplitDrift:
    """Velocity field ``∂H/∂(Du)`` of the first-order Godunov Hamiltonian.

    ``dH[δu] = T_W δu`` exactly, away from the kinks ``D±u = 0``.
    """
    a2 = grid.a[:, None] ** 2
    p1, m1, p2, m2 = _one_sided(grid, u, 1)
    return SplitDrift(np.maximum(m1, 0), np.minimum(p1, 0),
                      a2 * np.maximum(m2, 0), a2 * np.minimum(p2, 0))


def drift_variation(grid: TorusGrid, u: np.ndarray, z: np.ndarray) -> SplitDrift:
    """Derivative of :func:`godunov_drift` at ``u`` in direction ``z``."""
    a2 = grid.a[:, None] ** 2
    p1, m1, p2, m2 = _one_sided(grid, u, 1)
    zp1, zm1, zp2, zm2 = _one_sided(grid, z, 1)
    return SplitDrift(np.where(m1 > 0, zm1, 0.0), np.where(p1 < 0, zp1, 0.0),
                      a2 * np.where(m2 > 0, zm2, 0.0), a2 * np.where(p2 < 0, zp2, 0.0))
