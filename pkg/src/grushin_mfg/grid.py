"""Periodic grids on the 2-torus and the Grushin vector-field calculus.

The frame is ``X1 = d/dx1`` and ``X2 = a(x1) d/dx2``.  Two coefficient
profiles are available:

``SinProfile``
    ``a(x1) = sin(2 pi x1)``; smooth and periodic, vanishing on the lines
    ``x1 = 0`` and ``x1 = 1/2`` where ``a'`` does not vanish (step 2).
``ChartGrushin``
    ``a(x1)`` is the representative of ``x1`` in ``[-1/2, 1/2)``; the
    textbook Grushin field in a chart, discontinuous across ``x1 = 1/2``.

Grid values are stored as ``(n1, n2)`` arrays in C order, so the flat view is
row-major over ``(i1, i2)``.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class Profile(str, enum.Enum):
    SIN = "SinProfile"
    CHART = "ChartGrushin"

    @classmethod
    def parse(cls, value: "str | Profile") -> "Profile":
        if isinstance(value, Profile):
            return value
        for member in cls:
            if value in (member.value, member.name, member.value.lower()):
                return member
        raise ValueError(f"unknown profile {value!r}")


@dataclass(frozen=True)
class TorusGrid:
    n1: int
    n2: int
    profile: Profile = Profile.SIN

    def __post_init__(self):
        object.__setattr__(self, "profile", Profile.parse(self.profile))
        for name in ("n1", "n2"):
            n = getattr(self, name)
            if int(n) != n or n < 8 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 8, got {n}")

    @property
    def h1(self) -> float:
        return 1.0 / self.n1

    @property
    def h2(self) -> float:
        return 1.0 / self.n2

    @property
    def cell_area(self) -> float:
        return self.h1 * self.h2

    @property
    def size(self) -> int:
        return self.n1 * self.n2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n1, self.n2)

    @property
    def x1(self) -> np.ndarray:
        return np.arange(self.n1) * self.h1

    @property
    def x2(self) -> np.ndarray:
        return np.arange(self.n2) * self.h2

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def coefficient(self, x1=None) -> np.ndarray:
        """Evaluate ``a(x1)``; defaults to the grid nodes."""
        x1 = self.x1 if x1 is None else np.asarray(x1, dtype=float)
        if self.profile is Profile.SIN:
            return np.sin(2 * np.pi * x1)
        return np.mod(x1 + 0.5, 1.0) - 0.5

    @property
    def a(self) -> np.ndarray:
        return self.coefficient()

    def node(self, index: int) -> tuple[int, int]:
        return divmod(int(index), self.n2)

    def index(self, i1: int, i2: int) -> int:
        return (i1 % self.n1) * self.n2 + (i2 % self.n2)

    def torus_distance(self, p, q) -> np.ndarray:
        """Flat torus distance between points given in torus units."""
        d = np.abs(np.asarray(p, float) - np.asarray(q, float))
        d = np.minimum(d, 1.0 - np.mod(d, 1.0))
        return np.sqrt(np.sum(d**2, axis=-1))

    def header(self) -> str:
        return f"# grid {self.n1} {self.n2} {self.profile.value}"


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Values of a function at the nodes of a :class:`TorusGrid`."""

    grid: TorusGrid
    values: np.ndarray
    density: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.density:
            if v.min() < 0:
                raise ValueError("density has negative entries")
            mass = self.grid.cell_area * v.sum()
            if abs(mass - 1.0) > 1e-12:
                raise ValueError(f"density mass is {mass!r}, expected 1")

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def mass(self) -> float:
        return float(self.grid.cell_area * self.values.sum())

    def integrate(self, other: "ScalarField | np.ndarray") -> float:
        """Discrete pairing ``h1 h2 sum f g``."""
        g = other.values if isinstance(other, ScalarField) else np.asarray(other)
        return float(self.grid.cell_area * np.sum(self.values * g))

    def with_values(self, values, density: bool = False) -> "ScalarField":
        return ScalarField(self.grid, values, density=density)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, k):
        return self.with_values(self.values * _vals(k))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(self.grid.header() + "\n")
        for (i1, i2), v in np.ndenumerate(self.values):
            buf.write(f"{i1},{i2},{v:.17g}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, density: bool = False) -> "ScalarField":
        text = Path(source).read_text() if not str(source).startswith("#") else source
        lines = text.strip().splitlines()
        tag, kind, n1, n2, profile = lines[0].split()
        if tag != "#" or kind != "grid":
            raise ValueError("missing '# grid n1 n2 profile' header")
        grid = TorusGrid(int(n1), int(n2), Profile.parse(profile))
        values = np.full(grid.shape, np.nan)
        for line in lines[1:]:
            i1, i2, v = line.split(",")
            values[int(i1), int(i2)] = float(v)
        return cls(grid, values, density=density)


def _vals(x):
    return x.values if isinstance(x, ScalarField) else x


def as_density(grid: TorusGrid, values) -> ScalarField:
    """Normalise nonnegative values to unit mass."""
    v = np.asarray(values, dtype=float).reshape(grid.shape)
    if v.min() < 0:
        raise ValueError("negative values cannot be normalised to a density")
    return ScalarField(grid, v / (grid.cell_area * v.sum()), density=True)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """One slice per node of a uniform time mesh on ``[t0, T]``."""

    grid: TorusGrid
    t0: float
    T: float
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.array(self.data, dtype=float, copy=True)
        if d.ndim != 3 or d.shape[1:] != self.grid.shape:
            raise ValueError(f"expected (nt+1, {self.grid.n1}, {self.grid.n2}) data, got {d.shape}")
        if d.shape[0] < 3:
            raise ValueError("nt must be at least 2")
        if not np.all(np.isfinite(d)):
            raise ValueError("space-time field contains non-finite values")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def nt(self) -> int:
        return self.data.shape[0] - 1

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.nt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nt + 1)

    def __getitem__(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.data[k])

    def __len__(self):
        return self.nt + 1

    @property
    def slices(self) -> list[ScalarField]:
        return [self[k] for k in range(self.nt + 1)]

    def sup(self) -> float:
        return float(np.max(np.abs(self.data)))

    def to_csv_series(self, directory, stem: str) -> Path:
        """Write one CSV per slice plus a JSON manifest; returns the manifest path."""
        import json

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for k in range(self.nt + 1):
            name = f"{stem}_{k:04d}.csv"
            self[k].to_csv(directory / name)
            files.append({"slice": k, "t": float(self.times[k]), "file": name})
        manifest = directory / f"{stem}_manifest.json"
        manifest.write_text(json.dumps({"t0": self.t0, "T": self.T, "nt": self.nt,
                                        "grid": [self.grid.n1, self.grid.n2, self.grid.profile.value],
                                        "slices": files}, indent=2))
        return manifest


# ---------------------------------------------------------------------------
# Array-level stencils (used by the solvers; all periodic)
# ---------------------------------------------------------------------------

def d1c(f: np.ndarray, h: float) -> np.ndarray:
    """Centered difference along x1 (axis -2)."""
    return (np.roll(f, -1, axis=-2) - np.roll(f, 1, axis=-2)) / (2 * h)


def d2c(f: np.ndarray, h: float) -> np.ndarray:
    """Centered difference along x2 (axis -1)."""
    return (np.roll(f, -1, axis=-1) - np.roll(f, 1, axis=-1)) / (2 * h)


def dd1(f: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(f, -1, axis=-2) - 2 * f + np.roll(f, 1, axis=-2)) / h**2


def dd2(f: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(f, -1, axis=-1) - 2 * f + np.roll(f, 1, axis=-1)) / h**2


def x_derivatives(grid: TorusGrid, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = grid.a[:, None]
    return d1c(f, grid.h1), a * d2c(f, grid.h2)


def laplacian_array(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    a = grid.a[:, None]
    return dd1(f, grid.h1) + a**2 * dd2(f, grid.h2)


def divergence_array(grid: TorusGrid, g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    a = grid.a[:, None]
    return d1c(g1, grid.h1) + a * d2c(g2, grid.h2)


# ---------------------------------------------------------------------------
# Field-level operations
# ---------------------------------------------------------------------------

def apply_X(f: ScalarField, which: int) -> ScalarField:
    """Apply ``X1`` or ``X2`` with second-order centered differences."""
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    g = f.grid
    if which == 1:
        return f.with_values(d1c(f.values, g.h1))
    return f.with_values(g.a[:, None] * d2c(f.values, g.h2))


def apply_laplacian(f: ScalarField, stencil: str = "compact") -> ScalarField:
    """Grushin sub-Laplacian ``X1^2 + X2^2``.

    ``stencil="compact"`` uses 3-point second differences.  ``"wide"`` is the
    composition of the centered first differences (a 5-point stencil in each
    direction) and coincides with ``apply_div(apply_X(f, 1), apply_X(f, 2))``.
    """
    g = f.grid
    if stencil == "compact":
        return f.with_values(laplacian_array(g, f.values))
    if stencil == "wide":
        g1, g2 = x_derivatives(g, f.values)
        return f.with_values(divergence_array(g, g1, g2))
    raise ValueError(f"unknown stencil {stencil!r}")


def apply_div(g1: ScalarField, g2: ScalarField) -> ScalarField:
    """Frame divergence ``X1 g1 + X2 g2``; ``X_i^* = -X_i`` for this frame."""
    if g1.grid != g2.grid:
        raise ValueError("fields live on different grids")
    return g1.with_values(divergence_array(g1.grid, g1.values, g2.values))


# ---------------------------------------------------------------------------
# Hölder diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HolderReport:
    alpha: float
    sup_norm: float
    seminorm: float
    order: int

    @property
    def norm(self) -> float:
        return self.sup_norm + self.seminorm


_PAIR_LIMIT = 4096


def _pair_sample(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray] | None:
    """All pairs for small grids, a fixed pseudo-random subset otherwise."""
    if n <= _PAIR_LIMIT:
        return None
    rng = np.random.Generator(np.random.Philox(seed))
    m = 4 * 10**6
    i = rng.integers(0, n, size=m)
    j = rng.integers(0, n, size=m)
    keep = i != j
    return i[keep], j[keep]


def frame_derivatives(grid: TorusGrid, f: np.ndarray, order: int) -> list[np.ndarray]:
    """All ``X^J f`` with ``|J| <= order`` (ordered words in X1, X2)."""
    out = [f]
    layer = [f]
    for _ in range(order):
        nxt = []
        for g in layer:
            g1, g2 = x_derivatives(grid, g)
            nxt.extend([g1, g2])
        out.extend(nxt)
        layer = nxt
    return out


def holder_seminorm(values: np.ndarray, dist: np.ndarray, alpha: float,
                    pairs=None) -> float:
    """``sup |f(x) - f(y)| / d(x, y)^alpha`` over node pairs."""
    v = np.asarray(values, float).ravel()
    if pairs is None:
        diff = np.abs(v[:, None] - v[None, :])
        d = dist
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(d > 0, diff / np.where(d > 0, d, 1.0) ** alpha, 0.0)
        return float(ratio.max())
    i, j = pairs
    d = dist[i, j]
    ok = d > 0
    return float(np.max(np.abs(v[i[ok]] - v[j[ok]]) / d[ok] ** alpha, initial=0.0))


def holder_norm(f: ScalarField, alpha: float, order: int, dcc) -> HolderReport:
    """Discrete ``||f||_{order+alpha}`` measured with the CC distance table.

    ``sup_norm`` sums ``||X^J f||_inf`` and ``seminorm`` sums the Hölder
    seminorms of the ``X^J f`` over ``|J| <= order``.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    if not 0 < alpha < 1 and not (alpha == 1 and order == 0):
        raise ValueError("alpha must lie in (0, 1)")
    dist = dcc.dist if hasattr(dcc, "dist") else np.asarray(dcc)
    if dist.shape != (f.grid.size, f.grid.size):
        raise ValueError("distance table does not cover all node pairs")
    pairs = _pair_sample(f.grid.size)
    sup = semi = 0.0
    for g in frame_derivatives(f.grid, f.values, order):
        sup += float(np.max(np.abs(g)))
        semi += holder_seminorm(g, dist, alpha, pairs)
    return HolderReport(alpha=alpha, sup_norm=sup, seminorm=semi, order=order)
