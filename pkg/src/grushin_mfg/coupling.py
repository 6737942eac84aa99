"""Nonlocal running and terminal costs with kernel flat derivatives."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import ScalarField, TorusGrid, holder_norm

BASES = ("cosine", "zero")


class NodeKernel:
    """Symmetric kernel ``K(x, y)`` on grid nodes acting by ``h1 h2 Σ_y K(x,y) m(y)``.

    Stored either as a translation-invariant symbol (applied by FFT) or as a
    dense matrix (used for injected test kernels).
    """

    def __init__(self, grid: TorusGrid, symbol: np.ndarray | None = None,
                 matrix: np.ndarray | None = None):
        if (symbol is None) == (matrix is None):
            raise ValueError("give exactly one of symbol or matrix")
        self.grid = grid
        self.symbol = None if symbol is None else np.asarray(symbol, float)
        self._matrix = None if matrix is None else np.asarray(matrix, float)
        if self._matrix is not None and self._matrix.shape != (grid.size, grid.size):
            raise ValueError("kernel matrix must be (n1 n2) x (n1 n2)")

    @classmethod
    def zero(cls, grid: TorusGrid) -> "NodeKernel":
        return cls(grid, symbol=np.zeros((grid.n1, grid.n2 // 2 + 1)))

    @property
    def is_zero(self) -> bool:
        if self.symbol is not None:
            return not np.any(self.symbol)
        return not np.any(self._matrix)

    def apply(self, m: np.ndarray) -> np.ndarray:
        """``h1 h2 Σ_y K(·, y) m(y)`` for one field or a stack of fields."""
        m = np.asarray(m, float)
        g = self.grid
        if self.symbol is not None:
            if self.symbol.shape != (g.n1, g.n2 // 2 + 1):
                raise ValueError("kernel symbol does not match the grid")
            return np.fft.irfft2(np.fft.rfft2(m) * self.symbol, s=g.shape)
        flat = m.reshape(m.shape[:-2] + (g.size,))
        out = g.cell_area * flat @ self._matrix.T
        return out.reshape(m.shape)

    def matrix(self) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix
        g = self.grid
        eye = np.eye(g.size).reshape((g.size,) + g.shape)
        return self.apply(eye).reshape(g.size, g.size).T / g.cell_area

    def eigenvalues(self) -> tuple[np.ndarray, np.ndarray | None]:
        """Eigenvalues of the node matrix; eigenvectors only for dense kernels."""
        if self.symbol is not None:
            # circulant: the symbol of h1 h2 K is the spectrum of the operator
            return np.sort(self.symbol.ravel()) / self.grid.cell_area, None
        return np.linalg.eigh(0.5 * (self._matrix + self._matrix.T))


def _gaussian_symbol(grid: TorusGrid, sigma: float) -> np.ndarray:
    """rFFT symbol of convolution with a periodic unit-mass Gaussian of width sigma."""
    x1 = np.minimum(grid.x1, 1.0 - grid.x1)
    x2 = np.minimum(grid.x2, 1.0 - grid.x2)
    g = np.exp(-(x1[:, None] ** 2 + x2[None, :] ** 2) / (2.0 * sigma**2))
    g /= g.sum()
    # real, even kernel so the transform is real up to rounding
    return np.real(np.fft.rfft2(g))


def smoothing_kernel(grid: TorusGrid, sigma: float, scale: float, power: int) -> NodeKernel:
    """``scale · S^power`` with S the periodic Gaussian smoother (PSD for even power)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    s = _gaussian_symbol(grid, sigma)
    return NodeKernel(grid, symbol=scale * s**power)


@dataclass(frozen=True, eq=False)
class Coupling:
    """``F(x,m) = base_f + K_F m`` and ``G(x,m) = base_g + K_G m``."""

    base_f: ScalarField
    base_g: ScalarField
    kernel_f: NodeKernel
    kernel_g: NodeKernel
    sigma: float = 0.15
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> TorusGrid:
        return self.base_f.grid

    @property
    def is_decoupled(self) -> bool:
        return self.kernel_f.is_zero and self.kernel_g.is_zero

    def F(self, m: np.ndarray) -> np.ndarray:
        return self.base_f.values + self.kernel_f.apply(m)

    def G(self, m: np.ndarray) -> np.ndarray:
        return self.base_g.values + self.kernel_g.apply(m)


def cosine_base(grid: TorusGrid) -> ScalarField:
    X1, X2 = grid.mesh()
    v = np.cos(2 * np.pi * X1) + np.cos(2 * np.pi * X2)
    return ScalarField(grid, v / np.max(np.abs(v)))


def make_coupling(grid: TorusGrid, sigma: float = 0.15, scale_f: float = 1.0,
                  scale_g: float = 1.0, base: str = "cosine") -> Coupling:
    """Default coupling class: ``K_F = scale_f S S``, ``K_G = scale_g S^4``.

    The terminal kernel is mollified twice as often so its rows are smoother.
    ``base`` selects ``base_f``; ``base_g`` is always zero.
    """
    if base not in BASES:
        raise ValueError(f"coupling.base must be one of {BASES}")
    zero = ScalarField(grid, np.zeros(grid.shape))
    bf = cosine_base(grid) if base == "cosine" else zero
    kf = smoothing_kernel(grid, sigma, scale_f, 2) if scale_f else NodeKernel.zero(grid)
    kg = smoothing_kernel(grid, sigma, scale_g, 4) if scale_g else NodeKernel.zero(grid)
    return Coupling(bf, zero, kf, kg, sigma,
                    {"sigma": sigma, "scale_f": scale_f, "scale_g": scale_g, "base": base})


def zero_coupling(grid: TorusGrid) -> Coupling:
    return make_coupling(grid, scale_f=0.0, scale_g=0.0, base="zero")


def eval_F(c: Coupling, m: ScalarField) -> ScalarField:
    if m.grid != c.grid:
        raise ValueError("density and coupling live on different grids")
    return ScalarField(c.grid, c.F(m.values))


def eval_G(c: Coupling, m: ScalarField) -> ScalarField:
    if m.grid != c.grid:
        raise ValueError("density and coupling live on different grids")
    return ScalarField(c.grid, c.G(m.values))


@dataclass(frozen=True, eq=False)
class FlatDerivative:
    kernel: NodeKernel

    def matrix(self) -> np.ndarray:
        return self.kernel.matrix()

    def offset(self, m: ScalarField) -> np.ndarray:
        """``Σ_y' K(x,y') m(y') h^2`` for every x."""
        return self.kernel.apply(m.values).ravel()

    def normalized(self, m: ScalarField) -> np.ndarray:
        """``K(x,y) - Σ_y' K(x,y') m(y') h^2``; integrates to zero against m in y."""
        return self.matrix() - self.offset(m)[:, None]


def flat_derivative(c: Coupling, which: str) -> FlatDerivative:
    if which == "F":
        return FlatDerivative(c.kernel_f)
    if which == "G":
        return FlatDerivative(c.kernel_g)
    raise ValueError("which must be 'F' or 'G'")


@dataclass
class HypothesisReport:
    monotone: bool
    min_pairing: float
    psd_f: bool
    psd_g: bool
    min_eig_f: float
    min_eig_g: float
    witness: dict | None
    holder_F: float | None
    holder_dF: float | None
    holder_dG: float | None

    @property
    def ok(self) -> bool:
        return self.monotone and self.psd_f and self.psd_g


def _random_density(grid: TorusGrid, rng) -> np.ndarray:
    # smooth random density: a few random bumps on a floor
    X1, X2 = grid.mesh()
    v = np.full(grid.shape, 0.05)
    for _ in range(3):
        c = rng.random(2)
        w = 0.05 + 0.15 * rng.random()
        d1 = np.minimum(np.abs(X1 - c[0]), 1 - np.abs(X1 - c[0]))
        d2 = np.minimum(np.abs(X2 - c[1]), 1 - np.abs(X2 - c[1]))
        v = v + rng.random() * np.exp(-(d1**2 + d2**2) / (2 * w**2))
    return v / (grid.cell_area * v.sum())


def check_hypotheses(c: Coupling, n_samples: int = 100, seed: int = 0, alpha: float = 0.5,
                     dcc=None, holder_rows: int = 4) -> HypothesisReport:
    """Monotonicity on random density pairs, PSD of both kernels, Hölder surrogates.

    Hölder norms are only computed when a CC distance table ``dcc`` is given.
    """
    g = c.grid
    rng = np.random.Generator(np.random.Philox(seed))
    min_pair = np.inf
    witness = None
    for _ in range(n_samples):
        m1 = _random_density(g, rng)
        m2 = _random_density(g, rng)
        val = g.cell_area * np.sum((c.F(m1) - c.F(m2)) * (m1 - m2))
        if val < min_pair:
            min_pair = val
            if val < -1e-10:
                witness = {"kind": "pair", "m1": m1, "m2": m2, "pairing": float(val)}
    eig_f, vec_f = c.kernel_f.eigenvalues()
    eig_g, _ = c.kernel_g.eigenvalues()
    psd_f = eig_f[0] >= -1e-10
    psd_g = eig_g[0] >= -1e-10
    if not psd_f and vec_f is not None:
        rho = vec_f[:, 0] - vec_f[:, 0].mean()
        q = g.cell_area**2 * rho @ c.kernel_f.matrix() @ rho
        base = np.ones(g.size)
        s = 0.5 / max(np.max(np.abs(rho)), 1e-300)
        m1 = (base + s * rho).reshape(g.shape)
        m2 = (base - s * rho).reshape(g.shape)
        pairing = g.cell_area * np.sum((c.F(m1) - c.F(m2)) * (m1 - m2))
        witness = {"kind": "eigenvector", "eigenvalue": float(eig_f[0]), "rho": rho,
                   "quadratic_form": float(q), "m1": m1, "m2": m2, "pairing": float(pairing)}
        min_pair = min(min_pair, pairing)
    holder_F = holder_dF = holder_dG = None
    if dcc is not None:
        holder_F = max(holder_norm(ScalarField(g, c.F(_random_density(g, rng))), alpha, 1, dcc).norm
                       for _ in range(3))
        rows = rng.choice(g.size, size=min(holder_rows, g.size), replace=False)
        KF = c.kernel_f.matrix()
        KG = c.kernel_g.matrix()
        holder_dF = max(max(holder_norm(ScalarField(g, KF[r]), alpha, 2, dcc).norm,
                            holder_norm(ScalarField(g, KF[:, r]), alpha, 1, dcc).norm) for r in rows)
        holder_dG = max(max(holder_norm(ScalarField(g, KG[r]), alpha, 2, dcc).norm,
                            holder_norm(ScalarField(g, KG[:, r]), alpha, 2, dcc).norm) for r in rows)
    return HypothesisReport(bool(min_pair >= -1e-10), float(min_pair), bool(psd_f), bool(psd_g),
                            float(eig_f[0]), float(eig_g[0]), witness, holder_F, holder_dF, holder_dG)
