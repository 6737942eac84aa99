"""Negative-norm surrogate: sup over a frozen trigonometric dictionary.

``‖ρ‖_{-(1+α)} ≈ max_ψ |⟨ρ, ψ⟩| / ‖ψ‖_{1+α}`` with ψ ranging over the constant
and ``cos/sin 2π(k1 x1 + k2 x2)`` for ``|k|_∞ <= kmax``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .ccmetric import all_pairs
from .grid import ScalarField, TorusGrid, holder_norm

KMAX = 8
ALPHA = 0.5


def _modes(n1: int, n2: int, kmax: int) -> list[tuple[int, int]]:
    out = []
    for k1 in range(0, min(kmax, n1 // 2) + 1):
        for k2 in range(-min(kmax, n2 // 2), min(kmax, n2 // 2) + 1):
            if k1 == 0 and k2 <= 0:
                continue
            out.append((k1, k2))
    return out


@lru_cache(maxsize=16)
def dictionary(n1: int, n2: int, profile: str, alpha: float = ALPHA, kmax: int = KMAX):
    """FFT indices and reciprocal Hölder norms of the dictionary, cached per grid."""
    grid = TorusGrid(n1, n2, profile)
    dcc = all_pairs(grid)
    X1, X2 = grid.mesh()
    idx1, idx2, inv_cos, inv_sin = [], [], [], []
    for k1, k2 in _modes(n1, n2, kmax):
        phase = 2 * np.pi * (k1 * X1 + k2 * X2)
        nc = holder_norm(ScalarField(grid, np.cos(phase)), alpha, 1, dcc).norm
        s = np.sin(phase)
        ns = holder_norm(ScalarField(grid, s), alpha, 1, dcc).norm if np.max(np.abs(s)) > 1e-12 else np.inf
        idx1.append(k1 % n1)
        idx2.append(k2 % n2)
        inv_cos.append(1.0 / nc)
        inv_sin.append(1.0 / ns)
    return (np.array(idx1), np.array(idx2), np.array(inv_cos), np.array(inv_sin))


def dual_norm(grid: TorusGrid, rho: np.ndarray, alpha: float = ALPHA, kmax: int = KMAX) -> np.ndarray:
    """Surrogate norm of every field in ``rho`` (shape ``(..., n1, n2)``)."""
    i1, i2, inv_c, inv_s = dictionary(grid.n1, grid.n2, grid.profile.value, alpha, kmax)
    rho = np.asarray(rho, float)
    hat = grid.cell_area * np.fft.fft2(rho)
    sel = hat[..., i1, i2]
    # <rho, cos> = Re, <rho, sin> = -Im; the constant has Hölder norm 1
    best = np.maximum(np.max(np.abs(sel.real) * inv_c, axis=-1),
                      np.max(np.abs(sel.imag) * inv_s, axis=-1))
    return np.maximum(best, np.abs(hat[..., 0, 0].real))


def sup_dual_norm(grid: TorusGrid, path: np.ndarray, **kw) -> float:
    """``sup_t`` and max over any batch axes."""
    return float(np.max(dual_norm(grid, path, **kw)))
