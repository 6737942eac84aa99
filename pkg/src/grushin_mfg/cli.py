"""Command-line entry point.

Every subcommand writes under ``<out>/<config digest>/<subcommand>/``: a
``manifest.json`` (config echo, versions, seed, empirical constants, output
list) and a ``timings.json``.  Wall-clock times live only in the latter so the
manifest is reproducible bit for bit.

Exit codes: 0 success, 1 failed acceptance check, 2 invalid configuration,
3 solver failure (a ``diagnostic.json`` is written and its path printed).
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
import traceback
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, RunConfig

SUBCOMMANDS = ("kernel", "ccdist", "wasserstein", "hjb", "kfp", "mfg", "linearize",
               "master-kernel", "master-residual", "verify")

KERNEL_ROUTE_CAP = 24 * 24


class SolverFailure(RuntimeError):
    pass


def _solver_errors() -> tuple:
    from .ccmetric import SweepNotConverged
    from .heisenberg import QuadratureNotConverged
    from .hjb import PositivityGuardTriggered
    from .linearized import KernelBudgetExceeded, LinearizedNotConverged
    from .mfg import FixedPointNotConverged
    from .schemes import CFLViolation

    return (SolverFailure, SweepNotConverged, QuadratureNotConverged, PositivityGuardTriggered,
            KernelBudgetExceeded, LinearizedNotConverged, FixedPointNotConverged, CFLViolation)


def versions() -> dict:
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "pot", "numba"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


class Run:
    """Output directory, manifest constants and timings for one subcommand."""

    def __init__(self, cfg: RunConfig, command: str, out: Path, quick: bool):
        self.cfg = cfg
        self.command = command
        self.quick = quick
        self.dir = Path(out) / cfg.digest() / command
        self.dir.mkdir(parents=True, exist_ok=True)
        self.constants: dict = {}
        self.outputs: list[str] = []
        self.timings: dict = {}
        self._t = time.perf_counter()

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.dir / name

    def timed(self, label: str, fn, *args, **kw):
        t = time.perf_counter()
        r = fn(*args, **kw)
        self.timings[label] = time.perf_counter() - t
        return r

    def finish(self) -> Path:
        from .acceptance import jsonable

        self.timings["total"] = time.perf_counter() - self._t
        manifest = {"command": self.command, "quick": self.quick, "digest": self.cfg.digest(),
                    "config": self.cfg.to_dict(), "seed": self.cfg.seed, "versions": versions(),
                    "constants": jsonable(self.constants), "outputs": sorted(self.outputs)}
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        (self.dir / "timings.json").write_text(json.dumps(self.timings, indent=2, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------------------
# Problem set-up from the configuration
# ---------------------------------------------------------------------------

def _grid(cfg: RunConfig):
    from .grid import TorusGrid

    return TorusGrid(cfg.grid.n1, cfg.grid.n2, cfg.grid.profile)


def _coupling(cfg: RunConfig, g):
    from .coupling import make_coupling

    c = cfg.coupling
    return make_coupling(g, c.sigma, c.scale_f, c.scale_g, c.base)


def _m0(g):
    from .mfg import default_m0

    return default_m0(g)


def _solve(cfg: RunConfig, g, c, m0=None):
    from .mfg import solve_mfg

    s = cfg.solver
    return solve_mfg(cfg.time.t0, m0 if m0 is not None else _m0(g), c, theta=s.theta, tol=s.tol,
                     max_iter=s.max_iter, T=cfg.time.T, nt=cfg.time.nt)


def _dt(cfg: RunConfig):
    """Explicit step for master-equation solves; ``None`` keeps the default mesh."""
    return (cfg.time.T - cfg.time.t0) / cfg.time.nt if cfg.time.nt else None


def _nt(cfg: RunConfig, g) -> int:
    from .mfg import time_mesh

    return time_mesh(g, cfg.time.t0, cfg.time.T, cfg.time.nt, None)[0]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_kernel(run: Run):
    from . import heisenberg as H

    ts = (0.25, 0.5, 1.0)
    pts = [(x, y, z) for x in (0.0, 0.5) for y in (0.0, 0.5) for z in (0.0, 0.25, 0.5)]
    run.timed("table", H.kernel_table, ts, pts, path=run.path("kernel_table.csv"))
    run.constants["variant"] = H.load_calibration()["variant"]
    if not run.quick:
        run.constants["normalization"] = {str(t): run.timed(f"normalization_{t}", H.normalization, t)
                                          for t in ts}


def cmd_ccdist(run: Run):
    from .ccmetric import all_pairs, axis_scaling, bi_estimate_constants

    g = _grid(run.cfg)
    tab = run.timed("all_pairs", all_pairs, g)
    ax = axis_scaling(g)
    lines = ["dx2,d_cc,d_cc/sqrt(dx2)"]
    lines += [f"{x:.17g},{d:.17g},{d / np.sqrt(x):.17g}" for x, d in zip(ax["dx2"], ax["dist"])]
    run.path("axis_scaling.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    run.constants["axis_exponent"] = ax["exponent"]
    run.constants["axis_prefactor"] = ax["prefactor"]
    run.constants["bi_estimate"] = bi_estimate_constants(tab)


def cmd_wasserstein(run: Run):
    from .ccmetric import d1_distance, d1_dual_gap
    from .grid import as_density

    g = _grid(run.cfg)
    mc = run.cfg.metric
    m1 = _m0(g)
    m2 = as_density(g, 0.5 * m1.values + 0.5)
    out = {}
    if g.size <= mc.lp_cap:
        ex = run.timed("exact", d1_distance, m1, m2, "ExactLP", lp_cap=mc.lp_cap)
        out["exact"] = ex.cost
        out["certificate"] = d1_dual_gap(m1, m2, ex.potential, ex)
    en = run.timed("entropic", d1_distance, m1, m2, "Entropic", eps_final=mc.sinkhorn_eps_final)
    out["entropic"] = en.cost
    run.path("d1.json").write_text(json.dumps(out, indent=2) + "\n")
    run.constants.update(out)


def cmd_hjb(run: Run):
    from .grid import SpaceTimeField
    from .hjb import solve_hjb

    g = _grid(run.cfg)
    c = _coupling(run.cfg, g)
    nt = _nt(run.cfg, g)
    m0 = _m0(g)
    mpath = SpaceTimeField(g, run.cfg.time.t0, run.cfg.time.T,
                           np.broadcast_to(m0.values, (nt + 1,) + g.shape))
    u = run.timed("direct", solve_hjb, mpath, c, "Direct")
    uh = run.timed("hopf_cole", solve_hjb, mpath, c, "HopfCole")
    u.to_csv_series(run.dir / "u", "u")
    run.outputs.append("u/")
    run.constants["direct_vs_hopf_cole"] = float(np.max(np.abs(u.data - uh.data)))


def cmd_kfp(run: Run):
    from .hjb import solve_hjb
    from .grid import SpaceTimeField
    from .kfp import KFPProblem, solve_kfp
    from .schemes import godunov_drift

    g = _grid(run.cfg)
    c = _coupling(run.cfg, g)
    nt = _nt(run.cfg, g)
    m0 = _m0(g)
    t0, T = run.cfg.time.t0, run.cfg.time.T
    u = solve_hjb(SpaceTimeField(g, t0, T, np.broadcast_to(m0.values, (nt + 1,) + g.shape)), c)
    p = KFPProblem(m0, t0, T, nt, godunov_drift(g, u.data))
    r = run.timed("kfp", solve_kfp, p, True)
    r.rho.to_csv_series(run.dir / "m", "m")
    run.outputs.append("m/")
    run.constants["mass_drift"] = r.mass_drift
    run.constants["clamp_events"] = r.clamp_events


def cmd_mfg(run: Run):
    g = _grid(run.cfg)
    c = _coupling(run.cfg, g)
    s = run.timed("solve", _solve, run.cfg, g, c)
    s.u.to_csv_series(run.dir / "u", "u")
    s.m.to_csv_series(run.dir / "m", "m")
    run.outputs += ["u/", "m/"]
    run.constants.update({"iterations": s.iterations, "residual_history": s.residual_history,
                          "cfl": s.drift().cfl(g, s.dt), "nt": s.nt})


def cmd_linearize(run: Run):
    from .grid import ScalarField
    from .linearized import LinearizedProblem, energy_term, solve_linearized

    g = _grid(run.cfg)
    c = _coupling(run.cfg, g)
    s = run.timed("mfg", _solve, run.cfg, g, c)
    X1, X2 = g.mesh()
    rho0 = np.cos(2 * np.pi * X1) + 0.5 * np.sin(2 * np.pi * (X1 - X2))
    rho0 -= rho0.mean()
    sv = run.cfg.solver
    z, rho = run.timed("linearized", solve_linearized, LinearizedProblem(s, ScalarField(g, rho0)),
                       tol=sv.tol, max_iter=sv.max_iter, theta=sv.theta)
    z.to_csv_series(run.dir / "z", "z")
    rho.to_csv_series(run.dir / "rho", "rho")
    run.outputs += ["z/", "rho/"]
    run.constants["energy"] = energy_term(z, rho)
    run.constants["mass_drift"] = float(np.max(np.abs(rho.data.sum(axis=(1, 2)) * g.cell_area)))


def cmd_master_kernel(run: Run):
    from .master import eval_U

    g = _grid(run.cfg)
    c = _coupling(run.cfg, g)
    tol = run.cfg.solver.tol
    p = run.timed("eval_U", eval_U, run.cfg.time.t0, _m0(g), c, T=run.cfg.time.T, dt=_dt(run.cfg),
                  tol=tol)
    if p.solution is None:
        raise SolverFailure("t0 = T: the kernel is the terminal coupling kernel, nothing to build")
    K = run.timed("kernel", p.kernel, tol)
    K.save(run.path("K.bin"))
    run.outputs.append("K.bin.json")
    run.constants.update({"kernel_meta": K.meta, "sup": float(np.max(np.abs(K.K)))})


def cmd_master_residual(run: Run):
    from .master import eval_U, master_residual

    g = _grid(run.cfg)
    c = _coupling(run.cfg, g)
    tol = run.cfg.solver.tol
    p = run.timed("eval_U", eval_U, run.cfg.time.t0, _m0(g), c, T=run.cfg.time.T, dt=_dt(run.cfg),
                  tol=tol)
    if p.solution is None:
        raise SolverFailure("the residual needs t0 < T")
    route = "kernel" if g.size <= KERNEL_ROUTE_CAP else "adjoint"
    if route == "kernel":
        run.timed("kernel", p.kernel, tol)
    r = run.timed("residual", master_residual, p, route=route, tol=tol)
    r.to_csv(run.path("residual.csv"))
    run.constants.update({"route": route, "sup": r.sup(), "dt": p.solution.dt})


def cmd_verify(run: Run) -> bool:
    from .acceptance import CRITERIA, criterion_11, run_battery

    results = run_battery(sorted(CRITERIA), quick=run.quick, seed=run.cfg.seed,
                          echo=lambda s: print(s, flush=True))
    if not run.quick:
        r = criterion_11(run.dir / "determinism")
        print(r.line(), flush=True)
        results.append(r)
    for r in results:
        run.constants[str(r.number)] = {"passed": r.passed, "metrics": r.metrics}
        run.timings[f"criterion_{r.number}"] = r.seconds
    return all(r.passed for r in results)


HANDLERS = {"kernel": cmd_kernel, "ccdist": cmd_ccdist, "wasserstein": cmd_wasserstein,
            "hjb": cmd_hjb, "kfp": cmd_kfp, "mfg": cmd_mfg, "linearize": cmd_linearize,
            "master-kernel": cmd_master_kernel, "master-residual": cmd_master_residual,
            "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="grushin-mfg", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", metavar="PATH", help="key = value configuration file")
    ap.add_argument("--set", action="append", default=[], metavar="K=V",
                    help="override one key (repeatable)")
    ap.add_argument("--out", default="out", metavar="DIR", help="output root (default: out)")
    ap.add_argument("--quick", action="store_true",
                    help="16x16 meshes; for verify, the budgeted battery")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if args.quick and args.command != "verify":
        overrides = ["grid.n1=16", "grid.n2=16"] + overrides
    try:
        cfg = cfgmod.load(args.config, overrides)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    run = Run(cfg, args.command, Path(args.out), args.quick)
    try:
        ok = HANDLERS[args.command](run)
    except _solver_errors() as e:
        diag = run.dir / "diagnostic.json"
        info = {"command": args.command, "error": type(e).__name__, "message": str(e),
                "history": getattr(e, "history", None), "traceback": traceback.format_exc()}
        diag.write_text(json.dumps(info, indent=2, default=float) + "\n")
        print(f"solver failure: {e}\ndiagnostics: {diag}", file=sys.stderr)
        return 3
    path = run.finish()
    print(f"manifest: {path}")
    return 1 if ok is False else 0


if __name__ == "__main__":
    sys.exit(main())
