import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from truncmilstein.cli import RunConfig, load_config, run

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _quick(tmp_path, *extra):
    return ["--config", str(CONFIGS / "convergence.ini"), "--out", str(tmp_path),
            "--set", "experiment.samples=40", "--set", "experiment.reference_exponent=8",
            "--set", "experiment.coarse_exponents=6,5,4", *extra]


def test_validate_policy(tmp_path, capsys):
    assert run(["--config", str(CONFIGS / "validate.ini"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS  delta^(1/4) h(delta) <= 1" in out
    assert (tmp_path / "validation.csv").exists()
    assert (tmp_path / "manifest.json").exists()


def test_bad_epsilon_rejected(tmp_path, capsys):
    code = run(["--config", str(CONFIGS / "validate.ini"), "--out", str(tmp_path),
                "--set", "policy.epsilon=0.3"])
    assert code != 0
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1
    assert "delta^(1/4) h(delta) <= 1" in err


def test_convergence_outputs_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(_quick(a)) == 0
    assert run(_quick(b, "--workers", "3")) == 0
    for name in ("errors.csv", "slopes.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = list(csv.reader(open(a / "errors.csv")))
    assert rows[0] == ["scheme", "delta", "error", "stderr", "samples", "excluded"]
    assert len(rows) == 4
    ma = json.loads((a / "manifest.json").read_text())
    assert ma["increment_generator"]
    assert ma["library_version"]
    assert set(ma["artifacts"]) == {"errors.csv", "slopes.csv"}
    assert sorted(p.name for p in a.iterdir()) == ["errors.csv", "manifest.json",
                                                    "slopes.csv"]


def test_manifest_round_trip(tmp_path):
    assert run(_quick(tmp_path, "--seed", "99")) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    cfg = RunConfig.from_mapping(manifest["config"])
    expect = load_config(CONFIGS / "convergence.ini", [
        "experiment.samples=40", "experiment.reference_exponent=8",
        "experiment.coarse_exponents=6,5,4", f"run.out={tmp_path}", "experiment.seed=99"])
    assert cfg == expect
    assert manifest["seed"] == 99


def test_model_params_round_trip():
    cfg = load_config(CONFIGS / "gbm.ini")
    assert cfg.model_params == {"a": 0.05, "sigma": 0.2, "x0": 1.0}
    assert RunConfig.from_mapping(cfg.to_mapping()) == cfg


def test_single_path(tmp_path, capsys):
    code = run(["--config", str(CONFIGS / "single-path.ini"), "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.reader(open(tmp_path / "trajectory.csv")))
    assert rows[0][:3] == ["t", "truncated-milstein", "truncated-milstein:blown_up"]
    assert len(rows) == 1 + 2 * 64 + 1
    assert all(float(r[1]) == float(r[1]) for r in rows[1:])  # truncated stays finite


def test_single_path_one_step(tmp_path):
    code = run(["--config", str(CONFIGS / "single-path.ini"), "--out", str(tmp_path),
                "--set", "experiment.t_end=0.25", "--set", "experiment.step_exponent=2"])
    assert code == 0
    rows = list(csv.reader(open(tmp_path / "trajectory.csv")))
    assert len(rows) == 1 + 2


def test_zero_noise_gbm_tracks_exponential(tmp_path):
    import math
    code = run(["--config", str(CONFIGS / "single-path.ini"), "--out", str(tmp_path),
                "--set", "model.name=gbm", "--set", "model.sigma=0", "--set", "model.a=0.5",
                "--set", "experiment.t_end=1", "--set", "experiment.step_exponent=8",
                "--set", "policy.exponent=1", "--set", "policy.epsilon=0.25"])
    assert code == 0
    rows = list(csv.reader(open(tmp_path / "trajectory.csv")))
    t, *vals = rows[-1]
    exact = math.exp(0.5)
    # explicit Euler on y' = a y: global error about T a^2 y dt / 2
    for v in vals[0::2]:
        assert abs(float(v) - exact) <= 0.5**2 * exact * 2.0**-8


def test_moments(tmp_path):
    code = run(["--config", str(CONFIGS / "moments.ini"), "--out", str(tmp_path),
                "--set", "experiment.samples=100", "--set", "experiment.delta_exponents=6,5,4"])
    assert code == 0
    assert (tmp_path / "moments_truncated-milstein.csv").exists()
    assert (tmp_path / "trend.csv").exists()


@pytest.mark.parametrize("override,needle", [
    ("experiment.bogus=1", "unknown config key"),
    ("model.name=nope", "unknown model"),
    ("experiment.schemes=rk4", "unknown scheme"),
    ("experiment.samples=abc", "bad value"),
])
def test_usage_errors(tmp_path, capsys, override, needle):
    assert run(["--config", str(CONFIGS / "convergence.ini"), "--out", str(tmp_path),
                "--set", override]) == 2
    assert needle in capsys.readouterr().err


def test_missing_config(tmp_path, capsys):
    assert run(["--config", str(tmp_path / "missing.ini")]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "truncmilstein.cli", "--config",
                           str(CONFIGS / "validate.ini"), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
