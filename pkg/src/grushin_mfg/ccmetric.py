"""Carnot-Carathéodory distance on the grid and the Kantorovich distance d1.

``cc_sweep`` solves the anisotropic eikonal equation
``(d/dx1 d)^2 + a(x1)^2 (d/dx2 d)^2 = 1`` by Godunov-upwind fast sweeping.
``cc_oracle`` is an independent brute-force route: Dijkstra on the 8-neighbour
graph of the regularised Riemannian metric ``diag(1, 1/(a^2 + eps^2))``,
Richardson-extrapolated in ``eps``.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra, floyd_warshall

from .grid import ScalarField, TorusGrid

logger = logging.getLogger(__name__)

ALL_PAIRS = "ALL_PAIRS"

SWEEP_TOL = 1e-10
MAX_SWEEPS = 200


class SweepNotConverged(RuntimeError):
    def __init__(self, residual: float, sweeps: int):
        super().__init__(f"fast sweeping stalled after {sweeps} sweeps (max update {residual:.3e})")
        self.residual = residual
        self.sweeps = sweeps


class LipschitzViolation(ValueError):
    def __init__(self, pair, excess):
        super().__init__(f"potential is not 1-Lipschitz: pair {pair} exceeds the bound by {excess:.3e}")
        self.pair = pair
        self.excess = excess


@dataclass(frozen=True, eq=False)
class CCDistanceTable:
    grid: TorusGrid
    source: "int | str"
    dist: np.ndarray
    sweeps: int = 0

    def field(self) -> ScalarField:
        if self.source == ALL_PAIRS:
            raise ValueError("all-pairs table has no single-source field")
        return ScalarField(self.grid, self.dist.reshape(self.grid.shape))

    def to_csv(self, path=None) -> str:
        if self.source == ALL_PAIRS:
            raise ValueError("CSV export is defined for single-source tables")
        d = self.dist.reshape(self.grid.shape)
        lines = ["i1,i2,dist"] + [f"{i1},{i2},{v:.17g}" for (i1, i2), v in np.ndenumerate(d)]
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------------------
# Fast sweeping
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _godunov_update(u1, u2, h1, h2, a):
    c1 = u1 + h1
    if a == 0.0:
        return c1
    c2 = u2 + h2 / abs(a)
    A = 1.0 / (h1 * h1)
    B = a * a / (h2 * h2)
    best = min(c1, c2)
    if best <= max(u1, u2):
        return best
    disc = (A + B) - A * B * (u1 - u2) ** 2
    if disc < 0.0:
        return best
    t = (A * u1 + B * u2 + np.sqrt(disc)) / (A + B)
    if t >= max(u1, u2):
        return min(t, best)
    return best


@numba.njit(cache=True)
def _sweep(d, a, h1, h2, s1, s2, tol, max_sweeps):
    n1, n2 = d.shape
    for it in range(max_sweeps):
        change = 0.0
        for order in range(4):
            r1 = order & 1
            r2 = (order >> 1) & 1
            for ii in range(n1):
                i = n1 - 1 - ii if r1 else ii
                ip = i + 1 if i + 1 < n1 else 0
                im = i - 1 if i > 0 else n1 - 1
                for jj in range(n2):
                    j = n2 - 1 - jj if r2 else jj
                    if i == s1 and j == s2:
                        continue
                    jp = j + 1 if j + 1 < n2 else 0
                    jm = j - 1 if j > 0 else n2 - 1
                    u1 = min(d[im, j], d[ip, j])
                    u2 = min(d[i, jm], d[i, jp])
                    if u1 == np.inf and u2 == np.inf:
                        continue
                    t = _godunov_update(u1, u2, h1, h2, a[i])
                    if t < d[i, j]:
                        if d[i, j] < np.inf:
                            change = max(change, d[i, j] - t)
                        else:
                            change = np.inf
                        d[i, j] = t
        if change < tol:
            return it + 1, change
    return max_sweeps, change


def cc_sweep(grid: TorusGrid, source, tol: float = SWEEP_TOL,
             max_sweeps: int = MAX_SWEEPS) -> CCDistanceTable:
    """Single-source CC distance by fast sweeping (4 orderings per sweep)."""
    s1, s2 = (source if isinstance(source, tuple) else grid.node(source))
    d = np.full(grid.shape, np.inf)
    d[s1 % grid.n1, s2 % grid.n2] = 0.0
    sweeps, change = _sweep(d, grid.a.astype(float), grid.h1, grid.h2,
                            s1 % grid.n1, s2 % grid.n2, tol, max_sweeps)
    if change >= tol:
        raise SweepNotConverged(float(change), sweeps)
    return CCDistanceTable(grid, grid.index(s1, s2), d.ravel(), sweeps=sweeps)


CLOSURE_CAP = 1024


@lru_cache(maxsize=8)
def _all_pairs_cached(n1: int, n2: int, profile: str) -> np.ndarray:
    grid = TorusGrid(n1, n2, profile)
    rows = np.empty((n1, n1, n2))
    for i1 in range(n1):
        rows[i1] = cc_sweep(grid, (i1, 0)).dist.reshape(grid.shape)
    # a depends on x1 only, so d((i1, j1), (k1, j2)) = rows[i1][k1, j2 - j1]
    j = np.arange(n2)
    shift = (j[None, :] - j[:, None]) % n2  # [j1, j2]
    dist = np.empty((n1, n2, n1, n2))
    for i1 in range(n1):
        dist[i1] = rows[i1][:, shift].transpose(1, 0, 2)
    dist = dist.reshape(grid.size, grid.size)
    dist = 0.5 * (dist + dist.T)
    if grid.size <= CLOSURE_CAP:
        # metric closure removes the small triangle defects of the upwind scheme
        dist = floyd_warshall(dist, directed=False)
        dist = 0.5 * (dist + dist.T)
    dist.setflags(write=False)
    return dist


def all_pairs(grid: TorusGrid) -> CCDistanceTable:
    """Symmetric, metric-closed CC distance between all node pairs."""
    return CCDistanceTable(grid, ALL_PAIRS,
                           _all_pairs_cached(grid.n1, grid.n2, grid.profile.value))


# ---------------------------------------------------------------------------
# Graph oracle
# ---------------------------------------------------------------------------

def _graph(grid: TorusGrid, eps: float):
    n1, n2 = grid.shape
    i1, i2 = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    src, dst, w = [], [], []
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        j1 = (i1 + di) % n1
        j2 = (i2 + dj) % n2
        xmid = (i1 + 0.5 * di) * grid.h1
        a = grid.coefficient(xmid)
        dx1 = di * grid.h1
        dx2 = dj * grid.h2
        cost = np.sqrt(dx1**2 + dx2**2 / (a**2 + eps**2))
        src.append((i1 * n2 + i2).ravel())
        dst.append((j1 * n2 + j2).ravel())
        w.append(cost.ravel())
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    w = np.concatenate(w)
    n = grid.size
    return coo_matrix((w, (src, dst)), shape=(n, n)).tocsr()


@lru_cache(maxsize=16)
def _graph_cached(n1, n2, profile, eps):
    return _graph(TorusGrid(n1, n2, profile), eps)


def _graph_distances(grid: TorusGrid, source: int, eps: float) -> np.ndarray:
    g = _graph_cached(grid.n1, grid.n2, grid.profile.value, float(eps))
    return dijkstra(g, directed=False, indices=source)


def cc_oracle(grid: TorusGrid, source, target, epsilon: float = 0.05) -> float:
    """Extrapolated graph distance ``2 d(eps/2) - d(eps)``."""
    if not 0 < epsilon <= 0.1:
        raise ValueError("epsilon must lie in (0, 0.1]")
    s = source if isinstance(source, (int, np.integer)) else grid.index(*source)
    t = target if isinstance(target, (int, np.integer)) else grid.index(*target)
    if s == t:
        return 0.0
    d_eps = _graph_distances(grid, s, epsilon)[t]
    d_half = _graph_distances(grid, s, epsilon / 2)[t]
    return float(2 * d_half - d_eps)


def cc_oracle_field(grid: TorusGrid, source, epsilon: float = 0.05) -> np.ndarray:
    s = source if isinstance(source, (int, np.integer)) else grid.index(*source)
    return 2 * _graph_distances(grid, s, epsilon / 2) - _graph_distances(grid, s, epsilon)


def fit_power(x, y) -> tuple[float, float]:
    """Least-squares fit ``y = c x^p``; returns ``(p, c)``."""
    p, logc = np.polyfit(np.log(x), np.log(y), 1)
    return float(p), float(np.exp(logc))


def axis_scaling(grid: TorusGrid, offsets=None) -> dict:
    """Distances from the origin along the x2 axis and the fitted exponent."""
    if offsets is None:
        offsets = [2**k for k in range(1, int(np.log2(grid.n2 // 4)) + 1)]
    d = cc_sweep(grid, (0, 0)).dist.reshape(grid.shape)
    dx2 = np.array(offsets) * grid.h2
    vals = d[0, np.array(offsets)]
    p, c = fit_power(dx2, vals)
    return {"dx2": dx2.tolist(), "dist": vals.tolist(), "exponent": p, "prefactor": c}


def bi_estimate_constants(table: CCDistanceTable) -> dict:
    """Fitted constants ``C`` in ``d_T/C <= d_cc <= C d_T^(1/2)``."""
    g = table.grid
    x = np.stack(g.mesh(), -1).reshape(-1, 2)
    dt = g.torus_distance(x[:, None, :], x[None, :, :])
    off = dt > 0
    lower = float(np.max(dt[off] / table.dist[off]))
    upper = float(np.max(table.dist[off] / np.sqrt(dt[off])))
    return {"C_lower": lower, "C_upper": upper, "C": max(lower, upper)}


# ---------------------------------------------------------------------------
# Kantorovich distance
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TransportPlan:
    plan: np.ndarray
    cost: float
    method: str
    potential: np.ndarray | None = None

    def to_csv(self, path=None, threshold: float = 0.0) -> str:
        src, dst = np.nonzero(self.plan > threshold)
        lines = ["src,dst,mass"] + [f"{i},{j},{self.plan[i, j]:.17g}" for i, j in zip(src, dst)]
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


LP_CAP = 32 * 32


def _masses(m: ScalarField) -> np.ndarray:
    return m.flat * m.grid.cell_area


def _check_pair(m1: ScalarField, m2: ScalarField):
    if m1.grid != m2.grid:
        raise ValueError("densities live on different grids")
    for m in (m1, m2):
        if m.values.min() < 0 or abs(m.mass() - 1) > 1e-9:
            raise ValueError("d1 expects probability densities")


def _import_ot():
    for key in ("POT_BACKEND_DISABLE_PYTORCH", "POT_BACKEND_DISABLE_JAX",
                "POT_BACKEND_DISABLE_CUPY", "POT_BACKEND_DISABLE_TENSORFLOW"):
        os.environ.setdefault(key, "1")
    import ot

    return ot


def exact_transport(mu: np.ndarray, nu: np.ndarray, cost: np.ndarray) -> TransportPlan:
    ot = _import_ot()
    mu = np.ascontiguousarray(mu, dtype=float)
    nu = np.ascontiguousarray(nu, dtype=float)
    # network simplex wants marginals with identical sums to the last bit
    nu = nu * (mu.sum() / nu.sum())
    plan, log = ot.emd(mu, nu, np.ascontiguousarray(cost), numItermax=10**8, log=True)
    if log["warning"] is not None:
        raise RuntimeError(f"network simplex: {log['warning']}")
    # Kantorovich potential: c-transform of the row duals
    v = log["v"]
    phi = np.min(cost - v[None, :], axis=1)
    return TransportPlan(plan, float(np.sum(plan * cost)), "ExactLP", phi)


def round_to_marginals(P: np.ndarray, r: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Project a positive matrix onto the transport polytope (Altschuler et al.)."""
    x = np.minimum(r / np.maximum(P.sum(1), 1e-300), 1.0)
    P = P * x[:, None]
    y = np.minimum(c / np.maximum(P.sum(0), 1e-300), 1.0)
    P = P * y[None, :]
    er = r - P.sum(1)
    ec = c - P.sum(0)
    s = er.sum()
    if s > 0:
        P = P + np.outer(er, ec) / s
    return P


def sinkhorn_transport(mu: np.ndarray, nu: np.ndarray, cost: np.ndarray,
                       eps_start: float = 1e-1, eps_final: float = 1e-3,
                       n_stages: int = 8, tol: float = 1e-8,
                       max_iter: int = 5000) -> TransportPlan:
    """Sinkhorn with geometric epsilon annealing, then rounding.

    Scaling iterations run on a stabilised kernel; the scalings are folded
    into the dual potentials whenever they drift away from O(1).
    """
    mu = np.asarray(mu, float)
    nu = np.asarray(nu, float)
    f = np.zeros_like(mu)
    g = np.zeros_like(nu)
    for eps in np.geomspace(eps_start, eps_final, n_stages):
        K = np.exp((f[:, None] + g[None, :] - cost) / eps)
        u = np.ones_like(mu)
        v = np.ones_like(nu)
        for it in range(max_iter):
            v = nu / np.maximum(K.T @ u, 1e-300)
            u = mu / np.maximum(K @ v, 1e-300)
            big = max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max())
            if big > 30:
                f, g = f + eps * np.log(u), g + eps * np.log(v)
                K = np.exp((f[:, None] + g[None, :] - cost) / eps)
                u[:] = 1.0
                v[:] = 1.0
            if it % 10 == 0 and np.abs(v * (K.T @ u) - nu).sum() < tol:
                break
        f, g = f + eps * np.log(u), g + eps * np.log(v)
    P = np.exp((f[:, None] + g[None, :] - cost) / eps_final)
    P = round_to_marginals(P, mu, nu)
    return TransportPlan(P, float(np.sum(P * cost)), "Entropic")


def d1_distance(m1: ScalarField, m2: ScalarField, method: str = "ExactLP",
                cost: CCDistanceTable | None = None, eps_final: float = 1e-3,
                lp_cap: int = LP_CAP) -> TransportPlan:
    """Kantorovich distance with CC ground cost between two grid densities."""
    _check_pair(m1, m2)
    grid = m1.grid
    table = cost if cost is not None else all_pairs(grid)
    mu, nu = _masses(m1), _masses(m2)
    if method == "ExactLP":
        if grid.size > lp_cap:
            raise ValueError(f"ExactLP is capped at {lp_cap} nodes; use Entropic")
        return exact_transport(mu, nu, table.dist)
    if method == "Entropic":
        return sinkhorn_transport(mu, nu, table.dist, eps_final=eps_final)
    raise ValueError(f"unknown method {method!r}")


def check_lipschitz(potential: np.ndarray, dist: np.ndarray, tol: float = 1e-6):
    phi = np.asarray(potential, float).ravel()
    excess = np.abs(phi[:, None] - phi[None, :]) - dist
    k = int(np.argmax(excess))
    worst = excess.flat[k]
    if worst > tol:
        raise LipschitzViolation(np.unravel_index(k, excess.shape), float(worst))


def d1_dual_gap(m1: ScalarField, m2: ScalarField, potential, plan: TransportPlan | None = None,
                cost: CCDistanceTable | None = None) -> float:
    """Weak-duality certificate ``d1 - <phi, m1 - m2>`` for a 1-Lipschitz ``phi``."""
    table = cost if cost is not None else all_pairs(m1.grid)
    phi = potential.values if isinstance(potential, ScalarField) else np.asarray(potential)
    check_lipschitz(phi, table.dist)
    if plan is None:
        plan = d1_distance(m1, m2, "ExactLP", cost=table)
    pairing = float(np.sum(phi.ravel() * (_masses(m1) - _masses(m2))))
    return plan.cost - pairing


def d1_value(m1: np.ndarray, m2: np.ndarray, grid: TorusGrid, method: str = "auto",
             eps_final: float = 1e-3, lp_cap: int = LP_CAP) -> float:
    """Convenience wrapper on raw arrays; ``auto`` picks ExactLP under the cap."""
    if method == "auto":
        method = "ExactLP" if grid.size <= lp_cap else "Entropic"
    mu = np.clip(np.asarray(m1, float).ravel(), 0, None) * grid.cell_area
    nu = np.clip(np.asarray(m2, float).ravel(), 0, None) * grid.cell_area
    mu /= mu.sum()
    nu /= nu.sum()
    dist = all_pairs(grid).dist
    if method == "ExactLP":
        return exact_transport(mu, nu, dist).cost
    return sinkhorn_transport(mu, nu, dist, eps_final=eps_final).cost
