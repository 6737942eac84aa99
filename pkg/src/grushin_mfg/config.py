"""Run configuration: flat ``section.key = value`` text files.

Grammar: one assignment per line, ``#`` starts a comment, blank lines are
ignored.  Keys are dotted (``grid.n1``); values are integers, floats, booleans
(``true``/``false``), ``auto`` or bare strings.  Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .grid import Profile


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class GridSection:
    n1: int = 32
    n2: int = 32
    profile: str = "SinProfile"


@dataclass
class TimeSection:
    t0: float = 0.0
    T: float = 1.0
    nt: int | None = None


@dataclass
class CouplingSection:
    sigma: float = 0.15
    scale_f: float = 1.0
    scale_g: float = 1.0
    base: str = "cosine"


@dataclass
class SolverSection:
    theta: float = 0.5
    tol: float = 1e-8
    max_iter: int = 200


@dataclass
class MetricSection:
    lp_cap: int = 1024
    sinkhorn_eps_final: float = 1e-3


@dataclass
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    time: TimeSection = field(default_factory=TimeSection)
    coupling: CouplingSection = field(default_factory=CouplingSection)
    solver: SolverSection = field(default_factory=SolverSection)
    metric: MetricSection = field(default_factory=MetricSection)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Short hash of the canonical JSON echo; names the run directory."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def set(self, key: str, raw: str) -> None:
        parts = key.split(".")
        if len(parts) == 1:
            if key != "seed":
                raise ConfigError(key, "unknown key")
            self.seed = _coerce(key, raw, int)
            return
        if len(parts) != 2:
            raise ConfigError(key, "keys have the form section.name")
        sec_name, name = parts
        sec = getattr(self, sec_name, None)
        if sec is None or sec_name == "seed":
            raise ConfigError(key, "unknown section")
        types = {f.name: f.type for f in fields(sec)}
        if name not in types:
            raise ConfigError(key, "unknown key")
        setattr(sec, name, _coerce(key, raw, _TYPES[types[name]]))

    def validate(self) -> "RunConfig":
        g, t, c, s, m = self.grid, self.time, self.coupling, self.solver, self.metric
        for key, n in (("grid.n1", g.n1), ("grid.n2", g.n2)):
            if n < 8 or n % 2:
                raise ConfigError(key, "must be an even integer >= 8")
        if g.profile not in {p.value for p in Profile}:
            raise ConfigError("grid.profile", f"must be one of {[p.value for p in Profile]}")
        if not t.T > t.t0 >= 0:
            raise ConfigError("time.T", "need 0 <= t0 < T")
        if t.nt is not None and t.nt < 2:
            raise ConfigError("time.nt", "need at least 2 steps")
        if c.sigma <= 0:
            raise ConfigError("coupling.sigma", "must be positive")
        if c.scale_f < 0 or c.scale_g < 0:
            raise ConfigError("coupling.scale_f" if c.scale_f < 0 else "coupling.scale_g",
                              "negative scale breaks monotonicity")
        if c.base not in ("cosine", "zero"):
            raise ConfigError("coupling.base", "must be cosine or zero")
        if not 0 < s.theta <= 1:
            raise ConfigError("solver.theta", "must lie in (0, 1]")
        if not s.tol > 0:
            raise ConfigError("solver.tol", "must be positive")
        if s.max_iter < 1:
            raise ConfigError("solver.max_iter", "must be at least 1")
        if m.lp_cap < 1:
            raise ConfigError("metric.lp_cap", "must be positive")
        if not m.sinkhorn_eps_final > 0:
            raise ConfigError("metric.sinkhorn_eps_final", "must be positive")
        if self.seed < 0:
            raise ConfigError("seed", "must be nonnegative")
        return self


def _coerce(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        if kind == "int?":
            return None if raw.lower() in ("auto", "none") else int(raw)
        if kind is int:
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r}") from None


# annotations are strings under postponed evaluation
_TYPES = {"int": int, "float": float, "str": str, "bool": bool, "int | None": "int?"}


def parse_text(text: str, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        cfg.set(key, value)
    return cfg


def load(path=None, overrides=()) -> RunConfig:
    """Defaults, then the file at ``path``, then ``key=value`` overrides; validated."""
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError("--config", str(e)) from None
        parse_text(text, cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "overrides have the form key=value")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v)
    return cfg.validate()


def default_text() -> str:
    return resources.files("grushin_mfg").joinpath("data/default.cfg").read_text()


def dumps(cfg: RunConfig) -> str:
    lines = []
    for sec, vals in cfg.to_dict().items():
        if isinstance(vals, dict):
            for k, v in vals.items():
                lines.append(f"{sec}.{k} = {'auto' if v is None else v}")
        else:
            lines.append(f"{sec} = {vals}")
    return "\n".join(lines) + "\n"
