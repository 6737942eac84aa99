"""Acceptance battery: one function per criterion, each returning metrics and a verdict.

Every check is deterministic for a fixed seed.  ``quick=True`` drops to 16×16
meshes where the criterion allows it; wall-clock time is reported separately
from the metrics so that metric records can be compared bit for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import heisenberg as H
from .ccmetric import all_pairs, axis_scaling, cc_oracle, d1_distance, d1_dual_gap
from .coupling import _random_density, make_coupling, zero_coupling
from .dual import sup_dual_norm
from .grid import (ScalarField, SpaceTimeField, TorusGrid, apply_div, apply_laplacian, apply_X,
                   as_density, x_derivatives)
from .hjb import BackwardLinearProblem, hjb_direct, hjb_hopf_cole, solve_backward_linear
from .kfp import (KFPProblem, particle_gap, simulate_particles, solve_kfp, time_holder_check,
                  verify_weak_solution)
from .linearized import (LinearizedProblem, build_kernel_K, representation_defects,
                         solve_linearized)
from .master import (c1_expansion_error, eval_U, flow_consistency, master_residual,
                     measure_derivative_fd)
from .mfg import default_m0, lasry_lions_gap, lipschitz_experiment, solve_mfg

TWO_PI = 2 * math.pi


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    metrics: dict
    seconds: float = field(default=0.0, compare=False)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} criterion {self.number}: {self.title}"


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _rates(errs):
    return [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]


def _zero_mass_direction(g: TorusGrid) -> np.ndarray:
    X1, X2 = g.mesh()
    rho = np.cos(TWO_PI * X1) + 0.5 * np.sin(TWO_PI * (X1 - X2))
    return rho - rho.mean()


# ---------------------------------------------------------------------------
# 1. operator calculus
# ---------------------------------------------------------------------------

def criterion_1(quick: bool = False, seed: int = 0) -> CriterionResult:
    rng = _rng(seed)
    sbp = 0.0
    for n in (16, 32):
        g = TorusGrid(n, n)
        f, q = (ScalarField(g, rng.standard_normal(g.shape)) for _ in range(2))
        for i in (1, 2):
            lhs = np.sum(f.values * apply_X(q, i).values)
            rhs = -np.sum(apply_X(f, i).values * q.values)
            sbp = max(sbp, abs(lhs - rhs) * g.cell_area)
        lap = np.sum(f.values * apply_laplacian(q).values) - np.sum(apply_laplacian(f).values * q.values)
        sbp = max(sbp, abs(lap) * g.cell_area)

    errs = {"X1": [], "X2": [], "laplacian": [], "divergence": []}
    for n in (16, 32, 64):
        g = TorusGrid(n, n)
        X1, X2 = g.mesh()
        a = g.a[:, None]
        u = np.cos(TWO_PI * X1) * np.sin(TWO_PI * X2) + np.sin(TWO_PI * (X1 + X2))
        u1 = -TWO_PI * np.sin(TWO_PI * X1) * np.sin(TWO_PI * X2) + TWO_PI * np.cos(TWO_PI * (X1 + X2))
        u2 = TWO_PI * np.cos(TWO_PI * X1) * np.cos(TWO_PI * X2) + TWO_PI * np.cos(TWO_PI * (X1 + X2))
        u11 = -TWO_PI**2 * (np.cos(TWO_PI * X1) * np.sin(TWO_PI * X2) + np.sin(TWO_PI * (X1 + X2)))
        u22 = u11
        f = ScalarField(g, u)
        errs["X1"].append(np.max(np.abs(apply_X(f, 1).values - u1)))
        errs["X2"].append(np.max(np.abs(apply_X(f, 2).values - a * u2)))
        errs["laplacian"].append(np.max(np.abs(apply_laplacian(f).values - (u11 + a**2 * u22))))
        g2 = ScalarField(g, a * u)
        exact = u1 + a * (a * u2)
        errs["divergence"].append(np.max(np.abs(apply_div(f, g2).values - exact)))
    rates = {k: _rates(v) for k, v in errs.items()}
    rate_ok = all(3.2 <= r <= 4.8 for v in rates.values() for r in v)
    return CriterionResult(1, "operator calculus", sbp <= 1e-12 and rate_ok,
                           {"sbp_defect": sbp, "errors": errs, "rates": rates})


# ---------------------------------------------------------------------------
# 2. CC metric
# ---------------------------------------------------------------------------

def criterion_2(quick: bool = False, seed: int = 0) -> CriterionResult:
    worst = {}
    for n in (16, 32):
        g = TorusGrid(n, n)
        rng = _rng(seed)
        tab = all_pairs(g)
        gaps = []
        for _ in range(50):
            s, q = rng.integers(0, g.size, 2)
            gaps.append(abs(tab.dist[s, q] - cc_oracle(g, g.node(s), g.node(q))) / g.h1)
        worst[n] = float(max(gaps))
    ax = axis_scaling(TorusGrid(64, 64, "ChartGrushin"))
    ok = all(v <= 5.0 for v in worst.values()) and abs(ax["exponent"] - 0.5) <= 0.05
    return CriterionResult(2, "CC metric", ok,
                           {"max_gap_over_h": worst, "axis_exponent": ax["exponent"],
                            "axis_prefactor": ax.get("prefactor")})


# ---------------------------------------------------------------------------
# 3. transport
# ---------------------------------------------------------------------------

def criterion_3(quick: bool = False, seed: int = 0) -> CriterionResult:
    g = TorusGrid(16, 16)
    rng = _rng(seed + 1)
    gaps, certs = [], []
    for _ in range(20):
        m1 = as_density(g, _random_density(g, rng))
        m2 = as_density(g, _random_density(g, rng))
        ex = d1_distance(m1, m2, "ExactLP")
        en = d1_distance(m1, m2, "Entropic")
        gaps.append(abs(en.cost - ex.cost) / ex.cost)
        certs.append(d1_dual_gap(m1, m2, ex.potential, ex))
    ok = max(gaps) <= 1e-2 and min(certs) >= -1e-8
    return CriterionResult(3, "transport", ok,
                           {"max_relative_gap": float(max(gaps)), "min_certificate": float(min(certs))})


# ---------------------------------------------------------------------------
# 4. Heisenberg kernel
# ---------------------------------------------------------------------------

def criterion_4(quick: bool = False, seed: int = 0) -> CriterionResult:
    V = H.resolve_variant("OracleCalibrated")
    norms = {t: H.normalization(t, V) for t in (0.25, 0.5, 1.0)}
    mc = H.mc_agreement(0.5, V, n_cells=20, n_samples=100_000, seed=seed)
    rng = _rng(seed)
    v = H.DriftPath(np.array([0.0, 0.5, 1.0]), np.array([0.3, -0.7, 1.1]), np.array([1.0, 0.2, -0.4]))
    hom = 0.0
    for _ in range(20):
        p, q = rng.uniform(-1, 1, (2, 3))
        t = float(rng.uniform(0, 1))
        lhs = H.chi(t, H.compose(p, q), v)
        rhs = H.chi(t, p, v) * H.chi(t, q, v)
        hom = max(hom, float(abs(lhs - rhs) / abs(rhs)))
    ts = [0.1, 0.2, 0.4, 0.7, 1.0]
    f0 = H.gaussian_fit(V, 0, ts, [(0, 0, 0), (0.5, 0.3, 0.2), (1, 0, 0.5)])
    f1 = H.gaussian_fit(V, 1, ts, [(0.5, 0.3, 0.2), (1, 0, 0.5), (0.2, 0.7, -0.3)])
    ok = (all(abs(x - 1) <= 1e-3 for x in norms.values()) and mc["max_z"] <= 3.0 and hom <= 1e-14
          and abs(f0.exponent - 2.0) <= 0.05 and abs(f1.exponent - 2.5) <= 0.1)
    return CriterionResult(4, "Heisenberg kernel", ok,
                           {"normalization": {str(k): v for k, v in norms.items()},
                            "mc_max_z": mc["max_z"], "chi_homomorphism_defect": hom,
                            "exponent_k0": f0.exponent, "exponent_k1": f1.exponent,
                            "C_k0": f0.C, "C_k1": f1.C})


# ---------------------------------------------------------------------------
# 5. linear backward solver
# ---------------------------------------------------------------------------

def _manufactured_backward(n: int, steps_per_node: int = 2) -> float:
    g = TorusGrid(n, n)
    nt, T = steps_per_node * n, 1.0
    X1, X2 = g.mesh()
    a = g.a[:, None]
    t = np.linspace(0, T, nt + 1)[:, None, None]
    phi = np.cos(TWO_PI * X1) + np.sin(TWO_PI * (X1 + X2))
    p1 = -TWO_PI * np.sin(TWO_PI * X1) + TWO_PI * np.cos(TWO_PI * (X1 + X2))
    p2 = TWO_PI * np.cos(TWO_PI * (X1 + X2))
    lap = -TWO_PI**2 * np.cos(TWO_PI * X1) - TWO_PI**2 * (1 + a**2) * np.sin(TWO_PI * (X1 + X2))
    V1 = np.sin(TWO_PI * X2) + 0 * t
    V2 = np.cos(TWO_PI * X1) + 0 * t
    e = np.exp(T - t)
    z = e * phi
    f = e * phi - e * lap + V1 * e * p1 + V2 * a * e * p2
    p = BackwardLinearProblem(ScalarField(g, z[-1]), 0.0, T, nt, (V1, V2), SpaceTimeField(g, 0.0, T, f))
    return float(np.max(np.abs(solve_backward_linear(p).data - z)))


def criterion_5(quick: bool = False, seed: int = 0) -> CriterionResult:
    g = TorusGrid(16, 16)
    nt = 32
    rng = _rng(seed)
    V = tuple(rng.uniform(-0.8, 0.8, (nt + 1,) + g.shape) for _ in range(2))
    const = solve_backward_linear(BackwardLinearProblem(ScalarField(g, np.full(g.shape, 1.7)), 0.0, 1.0,
                                                        nt, V))
    e_const = float(np.max(np.abs(const.data - 1.7)))
    src = SpaceTimeField(g, 0.0, 1.0, np.full((nt + 1,) + g.shape, 0.6))
    zs = solve_backward_linear(BackwardLinearProblem(ScalarField(g, np.zeros(g.shape)), 0.0, 1.0, nt, V, src))
    exact = 0.6 * (1.0 - np.linspace(0, 1, nt + 1))[:, None, None]
    e_src = float(np.max(np.abs(zs.data - exact)))
    levels = (64, 128) if quick else (64, 128, 256)
    errs = [_manufactured_backward(n) for n in levels]
    rates = _rates(errs)
    ok = e_const <= 1e-12 and e_src <= 1e-12 and min(rates) >= 1.8
    return CriterionResult(5, "linear backward solver", ok,
                           {"constant_error": e_const, "source_error": e_src, "levels": list(levels),
                            "manufactured_errors": errs, "rates": rates})


# ---------------------------------------------------------------------------
# 6. Hopf–Cole cross-validation
# ---------------------------------------------------------------------------

def criterion_6(quick: bool = False, seed: int = 0) -> CriterionResult:
    g = TorusGrid(32, 32)
    c = make_coupling(g)
    s = solve_mfg(0.0, default_m0(g), c)
    F, GT = c.F(s.m.data), c.G(s.m.data[-1])
    gap = float(np.max(np.abs(hjb_direct(g, s.dt, F, GT) - hjb_hopf_cole(g, s.dt, F, GT))))
    return CriterionResult(6, "Hopf-Cole cross-validation", gap <= 1e-3,
                           {"mesh": [32, 32, s.nt], "gap": gap})


# ---------------------------------------------------------------------------
# 7. KFP
# ---------------------------------------------------------------------------

def _kfp_problem(n: int, steps_per_node: int = 2, source: bool = True) -> KFPProblem:
    from .mfg import bump_density

    g = TorusGrid(n, n)
    nt = steps_per_node * n
    X1, X2 = g.mesh()
    t = np.linspace(0, 1, nt + 1)[:, None, None]
    b = (np.sin(TWO_PI * X2) + 0 * t, np.cos(TWO_PI * X1) * (1 + t))
    c = ((0.3 * np.cos(TWO_PI * X1) * t + 0 * X2, 0.2 * np.sin(TWO_PI * (X2 + X1)) + 0 * t)
         if source else None)
    return KFPProblem(bump_density(g, width=0.15), 0.0, 1.0, nt, b, c)


def criterion_7(quick: bool = False, seed: int = 0) -> CriterionResult:
    levels = (16, 32, 64) if quick else (16, 32, 64, 128)
    defects, drift = [], 0.0
    for n in levels:
        p = _kfp_problem(n)
        r = solve_kfp(p, diagnostics=True)
        defects.append(verify_weak_solution(r.rho, p))
        drift = max(drift, r.mass_drift)
        drift = max(drift, solve_kfp(_kfp_problem(n, source=False), diagnostics=True).mass_drift)
    rates = _rates(defects)
    n = 16 if quick else 32
    g = TorusGrid(n, n)
    c = make_coupling(g)
    m0 = default_m0(g)
    s = solve_mfg(0.0, m0, c)
    parts = simulate_particles(m0, s.u, 100_000, seed)
    pgap = particle_gap(s.m.data[-1], parts.data[-1], g)
    x1, x2 = x_derivatives(g, s.u.data)
    C = float(np.max(np.hypot(x1, x2))) * (s.T - s.t0) + 2.0
    th = time_holder_check(s.m, C)
    ok = drift <= 1e-12 and min(rates) >= 1.8 and pgap <= 5e-2 and th["ok"]
    return CriterionResult(7, "KFP", ok,
                           {"mass_drift": drift, "weak_defects": defects, "rates": rates,
                            "particle_gap": pgap, "particle_mesh": n, "holder_C": C,
                            "holder_max_ratio": th["max_ratio"]})


# ---------------------------------------------------------------------------
# 8. MFG fixed point
# ---------------------------------------------------------------------------

def criterion_8(quick: bool = False, seed: int = 0) -> CriterionResult:
    tol = 1e-8
    n = 16 if quick else 32
    g = TorusGrid(n, n)
    c = make_coupling(g)
    m0 = default_m0(g)
    s1 = solve_mfg(0.0, m0, c, tol=tol)
    s2 = solve_mfg(0.0, m0, c, tol=tol, init="uniform")
    multi = max(float(np.max(np.abs(s1.u.data - s2.u.data))), sup_dual_norm(g, s1.m.data - s2.m.data))

    # monotonicity pair on a refinement (16 -> 32) with four time steps per node
    Cs, ll_ok = [], True
    for k in (16, 32):
        gk = TorusGrid(k, k)
        ck = make_coupling(gk)
        a = default_m0(gk)
        b = as_density(gk, 0.5 * a.values + 0.5)
        r = lasry_lions_gap(solve_mfg(0.0, a, ck, nt=4 * k), solve_mfg(0.0, b, ck, nt=4 * k))
        ll_ok &= r["lhs"] >= 0 and r["lhs"] <= r["C_report"] * r["rhs"] * (1 + 1e-12)
        Cs.append(r["C_report"])
    ll_change = abs(Cs[1] / Cs[0] - 1)

    rho = _zero_mass_direction(g)
    pairs = [(m0, ScalarField(g, m0.values + s * rho, density=True)) for s in (0.2, 0.1, 0.05)]
    lip = lipschitz_experiment(pairs, c, all_pairs(g), tol=1e-10)
    ok = multi <= 10 * tol and ll_ok and ll_change <= 0.25 and lip["relative_spread"] <= 0.30
    return CriterionResult(8, "MFG fixed point", ok,
                           {"mesh": n, "multi_start_gap": multi, "iterations": s1.iterations,
                            "C_report": Cs, "C_report_change": ll_change,
                            "lipschitz_ratios": [p["ratio"] for p in lip["pairs"]],
                            "lipschitz_spread": lip["relative_spread"]})


# ---------------------------------------------------------------------------
# 9. linearized system and kernel
# ---------------------------------------------------------------------------

def criterion_9(quick: bool = False, seed: int = 0) -> CriterionResult:
    tol = 1e-8
    g = TorusGrid(16, 16)
    c = make_coupling(g)
    s = solve_mfg(0.0, default_m0(g), c, tol=1e-11)
    K = build_kernel_K(s, tol=tol)
    rep = max(representation_defects(s, K, n=10, seed=seed, tol=tol))
    X1, X2 = g.mesh()
    r1 = np.cos(TWO_PI * X1)
    r2 = np.sin(TWO_PI * (X1 + X2))
    za, _ = solve_linearized(LinearizedProblem(s, ScalarField(g, r1)), tol=tol / 10)
    zb, _ = solve_linearized(LinearizedProblem(s, ScalarField(g, r2)), tol=tol / 10)
    zc, _ = solve_linearized(LinearizedProblem(s, ScalarField(g, 2 * r1 - 3 * r2)), tol=tol / 10)
    sup = float(np.max(np.abs(zc.data - 2 * za.data + 3 * zb.data)))
    z0 = solve_mfg(0.0, default_m0(g), zero_coupling(g))
    K0 = build_kernel_K(z0, tol=tol)
    zero = float(np.max(np.abs(K0.K)))
    ok = rep <= 10 * tol and sup <= 10 * tol and zero == 0.0
    return CriterionResult(9, "linearized system and kernel", ok,
                           {"representation_defect": rep, "superposition_defect": sup,
                            "zero_coupling_max": zero, "kernel_iterations": K.meta.get("max_iterations")})


# ---------------------------------------------------------------------------
# 10. master equation
# ---------------------------------------------------------------------------

def criterion_10(quick: bool = False, seed: int = 0) -> CriterionResult:
    tol = 1e-10
    g = TorusGrid(16, 16)
    c = make_coupling(g)
    m0 = default_m0(g)
    p = eval_U(0.0, m0, c, tol=tol)
    K = p.kernel(tol)
    rho = _zero_mass_direction(g)
    fd = measure_derivative_fd(0.0, m0, rho, c, K=K, base=p, tol=tol)
    c1 = [c1_expansion_error(0.0, m0, ScalarField(g, m0.values + s * rho, density=True), c, K, tol,
                             base=p)["sup"] for s in (0.2, 0.1, 0.05)]
    c1_ratios = [c1[i + 1] / c1[i] for i in range(len(c1) - 1)]
    flow = flow_consistency(p, tol)["gap"]

    # residual study: simultaneous halving of h, dt and dt_probe, dt = T / (16 n)
    res = []
    for n in (16, 32):
        gn = TorusGrid(n, n)
        cn = make_coupling(gn)
        pn = eval_U(0.0, default_m0(gn), cn, dt=1.0 / (16 * n), tol=tol)
        res.append(float(np.max(np.abs(master_residual(pn, route="adjoint", tol=tol).values))))
    rate = res[0] / res[1]

    mT = as_density(g, 0.5 * m0.values + 0.5)
    term = float(np.max(np.abs(eval_U(1.0, mT, c).U.values - c.G(mT.values))))
    ok = (fd["kernel_gap"] <= fd["tolerance"] and all(abs(r - 0.25) <= 0.1 for r in c1_ratios)
          and rate >= 1.8 and flow <= 10 * tol and term == 0.0)
    return CriterionResult(10, "master equation", ok,
                           {"fd_kernel_gap": fd["kernel_gap"], "fd_tolerance": fd["tolerance"],
                            "fd_difference_ratios": fd["difference_ratios"], "c1_errors": c1,
                            "c1_ratios": c1_ratios, "residuals": res, "residual_rate": rate,
                            "flow_gap": flow, "terminal_gap": term})


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10}


def run_criterion(number: int, quick: bool = False, seed: int = 0) -> CriterionResult:
    t = time.perf_counter()
    r = CRITERIA[number](quick=quick, seed=seed)
    r.seconds = time.perf_counter() - t
    return r


def run_battery(numbers=None, quick: bool = False, seed: int = 0, echo=None) -> list[CriterionResult]:
    out = []
    for k in numbers or sorted(CRITERIA):
        r = run_criterion(k, quick, seed)
        if echo is not None:
            echo(r.line() + f"  ({r.seconds:.1f} s)")
        out.append(r)
    return out


def jsonable(x):
    """Metrics as plain JSON types; floats keep full precision via ``repr``."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer, int)) and not isinstance(x, bool):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ---------------------------------------------------------------------------
# 11. end-to-end determinism
# ---------------------------------------------------------------------------

def criterion_11(workdir, runs: int = 2) -> CriterionResult:
    """Run ``verify --quick`` in fresh interpreters and compare the manifests byte for byte."""
    import subprocess
    import sys
    from pathlib import Path

    t = time.perf_counter()
    blobs, codes = [], []
    for k in range(runs):
        out = Path(workdir) / f"run{k}"
        proc = subprocess.run([sys.executable, "-m", "grushin_mfg.cli", "verify", "--quick",
                               "--out", str(out)], capture_output=True, text=True)
        codes.append(proc.returncode)
        found = sorted(out.glob("*/verify/manifest.json"))
        blobs.append(found[0].read_bytes() if found else b"")
    identical = all(b == blobs[0] for b in blobs) and bool(blobs[0])
    r = CriterionResult(11, "end-to-end determinism", identical and all(c == 0 for c in codes),
                        {"exit_codes": codes, "identical_manifests": identical})
    r.seconds = time.perf_counter() - t
    return r
