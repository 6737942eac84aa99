import pytest
from hypothesis import given, settings, strategies as st

from grushin_mfg import config as cfgmod
from grushin_mfg.config import ConfigError, RunConfig


def test_default_file_matches_dataclass():
    cfg = cfgmod.parse_text(cfgmod.default_text())
    assert cfg.to_dict() == RunConfig().to_dict()
    assert cfg.time.nt is None


def test_dumps_round_trips():
    cfg = cfgmod.load(overrides=["grid.n1=16", "time.nt=48", "coupling.base=zero", "seed=7"])
    again = cfgmod.parse_text(cfgmod.dumps(cfg))
    assert again.to_dict() == cfg.to_dict() and again.digest() == cfg.digest()


@pytest.mark.parametrize("item,key", [
    ("grid.bogus=1", "grid.bogus"),
    ("nosuch.n1=1", "nosuch.n1"),
    ("grid.n1=7", "grid.n1"),
    ("grid.n1=abc", "grid.n1"),
    ("grid.profile=Flat", "grid.profile"),
    ("time.t0=2", "time.T"),
    ("coupling.scale_f=-1", "coupling.scale_f"),
    ("solver.theta=1.5", "solver.theta"),
    ("metric.sinkhorn_eps_final=0", "metric.sinkhorn_eps_final"),
    ("seed=-1", "seed"),
])
def test_invalid_values_name_the_key(item, key):
    with pytest.raises(ConfigError) as e:
        cfgmod.load(overrides=[item])
    assert e.value.key == key


def test_file_then_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\ngrid.n1 = 16  # trailing\n\nsolver.tol = 1e-6\n")
    cfg = cfgmod.load(p, ["grid.n1=24"])
    assert cfg.grid.n1 == 24 and cfg.solver.tol == 1e-6
    p.write_text("grid.n1 16\n")
    with pytest.raises(ConfigError, match="line 1"):
        cfgmod.load(p)
    with pytest.raises(ConfigError):
        cfgmod.load(tmp_path / "missing.cfg")


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 64).map(lambda k: 2 * k), st.integers(0, 10**6))
def test_digest_tracks_content(n, seed):
    a = cfgmod.load(overrides=[f"grid.n1={n}", f"seed={seed}"])
    b = cfgmod.load(overrides=[f"seed={seed}", f"grid.n1={n}"])
    assert a.digest() == b.digest()
    c = cfgmod.load(overrides=[f"grid.n1={n}", f"seed={seed + 1}"])
    assert c.digest() != a.digest()
