import json

import pytest

from grushin_mfg.cli import main

SMALL = ["--set", "grid.n1=8", "--set", "grid.n2=8", "--set", "time.nt=32"]


def _manifest(out, command):
    found = list(out.glob(f"*/{command}/manifest.json"))
    assert len(found) == 1
    return json.loads(found[0].read_text())


def test_mfg_writes_series_and_manifest(tmp_path):
    assert main(["mfg", "--out", str(tmp_path)] + SMALL) == 0
    man = _manifest(tmp_path, "mfg")
    assert man["config"]["grid"]["n1"] == 8 and man["seed"] == 0
    assert man["constants"]["iterations"] >= 1 and "numpy" in man["versions"]
    run = next(tmp_path.glob("*/mfg"))
    assert len(list((run / "u").glob("u_*.csv"))) == 33 and len(list((run / "m").glob("m_*.csv"))) == 33
    assert "total" in json.loads((run / "timings.json").read_text())


def test_manifest_is_reproducible(tmp_path):
    for k in range(2):
        assert main(["wasserstein", "--out", str(tmp_path / str(k))] + SMALL) == 0
    blobs = [next((tmp_path / str(k)).glob("*/wasserstein/manifest.json")).read_bytes() for k in range(2)]
    assert blobs[0] == blobs[1]


def test_ccdist_prints_scaling_table(tmp_path, capsys):
    assert main(["ccdist", "--out", str(tmp_path), "--set", "grid.profile=ChartGrushin",
                 "--set", "grid.n1=32", "--set", "grid.n2=32"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("dx2,d_cc,d_cc/sqrt(dx2)")
    assert 0.4 < _manifest(tmp_path, "ccdist")["constants"]["axis_exponent"] < 0.6


@pytest.mark.parametrize("command", ["hjb", "kfp", "linearize", "master-kernel", "master-residual"])
def test_other_subcommands(tmp_path, command):
    assert main([command, "--out", str(tmp_path)] + SMALL) == 0
    assert _manifest(tmp_path, command)["command"] == command


def test_kernel_subcommand(tmp_path):
    assert main(["kernel", "--quick", "--out", str(tmp_path)]) == 0
    assert next(tmp_path.glob("*/kernel/kernel_table.csv")).read_text().startswith("x,y,z,t,gamma")


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["mfg", "--out", str(tmp_path), "--set", "grid.bogus=3"]) == 2
    assert "grid.bogus" in capsys.readouterr().err


def test_solver_failure_exit_code(tmp_path, capsys):
    code = main(["mfg", "--out", str(tmp_path), "--set", "solver.max_iter=1",
                 "--set", "solver.tol=1e-15"] + SMALL)
    assert code == 3
    err = capsys.readouterr().err
    diag = err.split("diagnostics: ")[1].strip()
    info = json.loads(open(diag).read())
    assert info["error"] == "FixedPointNotConverged" and len(info["history"]) == 1


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["nope"])
