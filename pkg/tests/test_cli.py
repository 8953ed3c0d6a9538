import json

import pytest

from jammed_rtp import __version__, cli


def run(tmp_path, *args, out="out"):
    d = tmp_path / out
    code = cli.main([*args, "--out", str(d)])
    return code, d


def read_csv_body(path):
    lines = path.read_text().splitlines()
    assert lines[0] == f"# version: {__version__}"
    assert lines[1].startswith("# config: ")
    return lines[2:]


def test_invariant_outputs(tmp_path):
    code, d = run(tmp_path, "invariant")
    assert code == 0
    doc = json.loads((d / "measure.json").read_text())
    assert doc["version"] == __version__
    assert doc["config"]["process"] == "instantaneous-linear"
    assert doc["total_mass"] == pytest.approx(1.0)
    body = read_csv_body(d / "density.csv")
    assert body[0] == "x,density_+2,density_0,density_-2"


def test_outputs_are_deterministic(tmp_path):
    args = ["tv-decay", "--n", "2000", "--t-grid", "1:5:1", "--seed", "3"]
    code_a, a = run(tmp_path, *args, out="a")
    code_b, b = run(tmp_path, *args, out="b")
    assert code_a == code_b == 0
    for name in ("decay.csv", "fit.json", "bounds.json"):
        ta = (a / name).read_text().replace(str(a), "")
        tb = (b / name).read_text().replace(str(b), "")
        assert ta == tb


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"process": "finite-linear", "v": 3.0, "alpha": 2.0}))
    code, d = run(tmp_path, "rates", "--config", str(cfg), "--alpha", "0.5")
    assert code == 0
    doc = json.loads((d / "bounds.json").read_text())
    assert doc["config"]["alpha"] == 0.5
    assert doc["config"]["v"] == 3.0
    assert doc["bounds"]["kind"] == "finite"


@pytest.mark.parametrize(
    "args,needle",
    [
        (["invariant", "--v", "0.5"], "linear potential requires v > c"),
        (["invariant", "--omega", "-1"], "omega must be a positive number"),
        (["simulate", "--t-grid", "3,1"], "t-grid must be nonnegative and sorted"),
        (["simulate", "--sigma0", "+1"], "sigma0 must be one of"),
        (["wasserstein-decay"], "needs the instantaneous-harmonic process"),
        (["invariant", "--process", "instantaneous-harmonic", "--omega", "0.5"], "pole"),
    ],
)
def test_config_errors_exit_2(tmp_path, capsys, args, needle):
    code, d = run(tmp_path, *args)
    assert code == 2
    assert needle in capsys.readouterr().err
    assert not d.exists()


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"omgea": 1.0}))
    code, _ = run(tmp_path, "invariant", "--config", str(cfg))
    assert code == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_verification_failure_exit_3(tmp_path):
    code, d = run(tmp_path, "invariant", "--process", "finite-linear", "--v", "3", out="m")
    assert code == 0
    doc = json.loads((d / "measure.json").read_text())
    atoms = doc["measure"]["atoms"]
    atoms["00"] = repr(float(atoms["00"]) + 0.01)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc, sort_keys=True))
    code, d = run(tmp_path, "verify-stationarity", "--process", "finite-linear", "--v", "3", "--measure", str(bad))
    assert code == 3
    verdict = json.loads((d / "verdict.json").read_text())
    assert verdict["pass"] is False and verdict["max_abs_residual"] > 1e-3


def test_verify_round_trip_passes(tmp_path):
    run(tmp_path, "invariant", "--process", "finite-linear", "--v", "3", out="m")
    code, d = run(
        tmp_path, "verify-stationarity", "--process", "finite-linear", "--v", "3",
        "--measure", str(tmp_path / "m" / "measure.json"),
    )
    assert code == 0
    assert len(read_csv_body(d / "residuals.csv")) == 21


def test_mode_mismatch_is_a_config_error(tmp_path):
    run(tmp_path, "invariant", out="m")
    code, _ = run(
        tmp_path, "verify-stationarity", "--process", "finite-linear", "--v", "3",
        "--measure", str(tmp_path / "m" / "measure.json"),
    )
    assert code == 2


def test_numeric_failure_exit_4_removes_partial_output(tmp_path, monkeypatch):
    def boom(cfg, art):
        art.csv("partial.csv", ["a"], [(1.0,)])
        raise ArithmeticError("series diverged")

    monkeypatch.setitem(cli.HANDLERS, "roots", boom)
    code, d = run(tmp_path, "roots")
    assert code == 4
    assert not d.exists()


def test_roots(tmp_path):
    code, d = run(tmp_path, "roots", "--process", "finite-linear", "--v", "3")
    assert code == 0
    doc = json.loads((d / "roots.json").read_text())
    zetas = [t["zeta"] for t in doc["terms"]]
    assert zetas[0] == pytest.approx(-0.25)
    assert min(doc["companion_roots_P2"]) == pytest.approx(zetas[0], abs=1e-12)
    assert min(doc["companion_roots_P3"]) == pytest.approx(zetas[1], abs=1e-12)
    assert all(t["residual_rel"] < 1e-10 for t in doc["terms"])


def test_simulate_path_and_ensemble(tmp_path):
    code, d = run(tmp_path, "simulate", "--horizon", "5", "--x0", "1", out="p")
    assert code == 0
    assert read_csv_body(d / "path.csv")[0] == "t,x,sigma,event_kind"
    code, d = run(tmp_path, "simulate", "--t-grid", "1,2", "--n", "4", out="e")
    assert code == 0
    assert len(read_csv_body(d / "ensemble.csv")) == 1 + 8


def test_wasserstein_decay(tmp_path):
    code, d = run(
        tmp_path, "wasserstein-decay", "--process", "instantaneous-harmonic", "--v", "1", "--x0", "3",
        "--n", "3000", "--t-grid", "0:3:0.5", "--q", "2",
    )
    assert code == 0
    bounds = json.loads((d / "bounds.json").read_text())
    assert bounds["bounds"]["rate"] == pytest.approx(2 / 3)
    assert bounds["F_q"] == 3.0
    rows = read_csv_body(d / "decay.csv")
    assert len(rows) == 1 + 2 * 7


def test_grid_parser():
    assert cli.parse_grid("1:2:0.5") == [1.0, 1.5, 2.0]
    assert cli.parse_grid("0.5,1") == [0.5, 1.0]
    with pytest.raises(cli.ConfigError):
        cli.parse_grid("1:2:0")
