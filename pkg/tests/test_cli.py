import csv
import json
import math
import shutil
import subprocess
import sys
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from optwithdraw import ModelSpec, affine, logistic, sqrt_affine
from optwithdraw.cli import EXIT_INVALID, EXIT_OK, main
from optwithdraw.config import ConfigError, Numerics, RunConfig, SweepConfig, load, loads
from optwithdraw.simulate import SimConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


# --- configuration ---------------------------------------------------------------

coef = st.floats(0.01, 2.0, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(mu0=coef, mu1=coef, s0=coef, F0=coef, F1=coef, K=st.floats(1.0, 50.0),
       dt=st.floats(1e-4, 1e-2), seed=st.integers(0, 2 ** 64 - 1), barrier=st.none() | coef,
       res=st.integers(2, 40), log_mu=st.booleans())
def test_config_roundtrip(mu0, mu1, s0, F0, F1, K, dt, seed, barrier, res, log_mu):
    mu = logistic(mu0, mu1, K) if log_mu else affine(mu0, mu1)
    spec = ModelSpec(mu, sqrt_affine(s0, s0), affine(F0, F1, role="bound"), 0.33)
    cfg = RunConfig(spec, Numerics(tol=1e-9), SimConfig(dt=dt, seed=seed), barrier,
                    SweepConfig(resolution=res))
    again = loads(cfg.dumps())
    assert again.to_dict() == cfg.to_dict()
    assert again.sim == cfg.sim and again.barrier == cfg.barrier


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load(path)
    assert loads(cfg.dumps()).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("text", [
    "[model]\nq = 0.33\n",
    "[model]\nq = 0.33\n[model.mu]\nkind = 'affine'\nc0 = 0.1\nc1 = 0.1\n[model.sigma]\nkind = 'constant'\n"
    "s0 = 0.3\n[model.bound]\nkind = 'affine'\nc0 = 0.1\nc1 = 0.1\n[sim]\nbogus = 1\n",
    "not toml [",
])
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigError):
        loads(text)


# --- command line ------------------------------------------------------------------

def _copy_config(tmp_path, name, edit=None):
    text = (CONFIGS / name).read_text()
    if edit:
        text = edit(text)
    p = tmp_path / name
    p.write_text(text)
    return p


def test_solve_writes_outputs(tmp_path):
    cfg = _copy_config(tmp_path, "fig1_affine_sigma.toml")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_OK
    sol = json.loads((tmp_path / "o" / "solution.json").read_text())
    assert sol["regime"] == "BarrierPositive" and sol["diagnostics_pass"]
    assert sol["b_star"] == pytest.approx(0.274589954, abs=1e-8)
    with open(tmp_path / "o" / "value.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "V", "dV", "d2V"]
    assert float(rows[1][0]) == 0.0 and float(rows[1][1]) == 0.0
    raw = (tmp_path / "o" / "value.csv").read_bytes()
    assert b"\r\n" not in raw
    for name in ("fundamentals.csv", "resolvent.csv"):
        assert (tmp_path / "o" / name).stat().st_size > 0


def test_invalid_model_exit_code(tmp_path, capsys):
    # discount below the drift slope
    cfg = _copy_config(tmp_path, "fig1_constant_sigma.toml", lambda t: t.replace("q = 0.33", "q = 0.1", 1))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_INVALID
    assert "error" in capsys.readouterr().err


def test_missing_config_exit_code(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.toml"), "--quiet"]) == EXIT_INVALID
    assert main(["solve", "--quiet"]) == EXIT_INVALID


def test_bad_sim_settings_exit_code(tmp_path):
    cfg = _copy_config(tmp_path, "fig1_affine_sigma.toml")
    args = ["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet", "--dt", "0.5"]
    assert main(args) == EXIT_INVALID
    assert main(args[:-2] + ["--barrier", "-1"]) == EXIT_INVALID


def test_zero_bound_config(tmp_path):
    cfg = _copy_config(tmp_path, "zero_bound.toml")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_OK
    sol = json.loads((tmp_path / "o" / "solution.json").read_text())
    assert sol["regime"] == "BarrierZero" and sol["b_star"] == 0.0


def test_simulate_reports_are_byte_identical(tmp_path):
    cfg = _copy_config(tmp_path, "fig1_affine_sigma.toml")
    common = ["--config", str(cfg), "--quiet", "--paths", "2000", "--dt", "0.01", "--seed", "7"]
    assert main(["simulate", "--out", str(tmp_path / "a")] + common) == EXIT_OK
    assert main(["simulate", "--out", str(tmp_path / "b")] + common) == EXIT_OK
    a = (tmp_path / "a" / "report.json").read_bytes()
    assert a == (tmp_path / "b" / "report.json").read_bytes()
    rep = json.loads(a)
    assert rep["n_paths"] == 2000 and rep["seed"] == 7
    assert abs(rep["z_score"]) < 5


def test_simulate_from_zero(tmp_path):
    cfg = _copy_config(tmp_path, "fig1_affine_sigma.toml")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet",
                 "--paths", "100", "--dt", "0.01", "--x0", "0"]) == EXIT_OK
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["mean"] == 0.0 and rep["analytic"] == 0.0 and rep["z_score"] == 0.0


def test_sweep_command(tmp_path):
    cfg = _copy_config(tmp_path, "logistic_fig4.toml",
                       lambda t: t.replace("resolution = 20", "resolution = 4"))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_OK
    with open(tmp_path / "o" / "heatmap.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 16 and all(r["error"] == "" for r in rows)
    summary = json.loads((tmp_path / "o" / "sweep.json").read_text())
    assert summary["zero_region_connected"]


def test_special_command(capsys):
    assert main(["special", "M", "1", "1", "2.0"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["value"] == pytest.approx(math.exp(2.0), rel=1e-14)
    assert main(["special", "D", "1.0", "0.0", "--deriv"]) == EXIT_OK
    assert "derivative" in json.loads(capsys.readouterr().out)
    assert main(["special", "U", "1", "2.0"]) == EXIT_INVALID


@pytest.mark.skipif(shutil.which("optwithdraw") is None, reason="console script not installed")
def test_console_script():
    r = subprocess.run(["optwithdraw", "special", "U", "1", "2", "4.0"], capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["value"] == pytest.approx(0.25, rel=1e-12)
    r = subprocess.run([sys.executable, "-m", "optwithdraw.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0
