import json
import subprocess
import sys

import pytest

from fairreg.cli import main


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out-dir", str(out), "--seed", "3", "--test-size", "200"]) == 0
    return out


def test_simulate_writes_train_and_test(sim_dir):
    assert (sim_dir / "train.csv").read_text().startswith("group,y,x1,")
    assert len((sim_dir / "test.csv").read_text().splitlines()) == 1 + 400


def test_simulate_along_axis(tmp_path):
    assert main(["simulate", "--out-dir", str(tmp_path), "--axis", "num-small-groups",
                 "--value", "2"]) == 0
    assert "small2" in (tmp_path / "train.csv").read_text()
    assert main(["simulate", "--axis", "num-small-groups"]) == 1


def test_fit_save_predict(sim_dir, tmp_path, capsys):
    model = tmp_path / "m.json"
    assert main(["fit", "--data", str(sim_dir / "train.csv"), "--method", "fair",
                 "--lambdas", '{"large": 0.01, "small": 0.05}', "--model-out", str(model)]) == 0
    assert json.loads(model.read_text())["kind"] == "fair"
    preds = tmp_path / "p.csv"
    assert main(["predict", "--data", str(sim_dir / "test.csv"), "--model", str(model),
                 "--out", str(preds)]) == 0
    out = capsys.readouterr().out
    assert "mse small:" in out
    assert len(preds.read_text().splitlines()) == 401


def test_fit_joint_and_missing_lambda(sim_dir):
    assert main(["fit", "--data", str(sim_dir / "train.csv"), "--method", "joint",
                 "--lambda", "0.01", "--gamma", "0.5"]) == 0
    assert main(["fit", "--data", str(sim_dir / "train.csv"), "--method", "indicator"]) == 1


def test_tune_writes_table(sim_dir, tmp_path, capsys):
    assert main(["tune", "--data", str(sim_dir / "train.csv"), "--method", "indicator",
                 "--out-dir", str(tmp_path)]) == 0
    assert "selected:" in capsys.readouterr().out
    assert len((tmp_path / "tuning.csv").read_text().splitlines()) == 14


def test_base_case_with_config_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("replications: 5\nmethods: [indicator]\nseed: 2\n")
    assert main(["base-case", "--config", str(cfg), "--replications", "1",
                 "--out-dir", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "base-case_results.csv").read_text().splitlines()
    assert len(rows) == 1 + 4
    assert "indicator" in capsys.readouterr().out


def test_errors_exit_nonzero_with_diagnostic(tmp_path, capsys):
    assert main(["fit", "--data", str(tmp_path / "missing.csv"), "--method", "fair",
                 "--lambda", "1"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("fairreg fit: error:") and "missing.csv" in err
    bad = tmp_path / "bad.yaml"
    bad.write_text("bogus_key: 1\n")
    assert main(["base-case", "--config", str(bad)]) == 1
    assert main(["sweep", "--replications", "1"]) == 1
    assert main(["real-data", "--replications", "1"]) == 1


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fairreg.cli", "predict", "--data",
                           str(tmp_path / "x.csv"), "--model", "m.json"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stderr.count("\n") == 1 and "error" in proc.stderr
