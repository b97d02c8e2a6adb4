import filecmp
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from fairreg import experiments
from fairreg.core import GroupedDataset
from fairreg.experiments import (
    ExperimentConfig,
    coefficient_table,
    predict_from_table,
    run_base_case,
    run_real_data,
    run_sweep,
    run_timing,
    sample_real_data,
    summarize,
)
from fairreg.io import write_csv
from fairreg.models import fit_fair
from fairreg.simgen import ScenarioParams, build_scenario, generate

FAST = ("fair", "indicator")


def test_base_case_rerun_is_byte_identical(tmp_path):
    cfg = ExperimentConfig(replications=2, methods=FAST, out_dir=str(tmp_path / "a"), seed=7)
    a = run_base_case(cfg)
    run_base_case(replace(cfg, out_dir=str(tmp_path / "b")))
    run_base_case(replace(cfg, out_dir=str(tmp_path / "c"), workers=2))
    for name in ("base-case_results.csv", "base-case_summary.txt"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "c" / name, shallow=False)
    assert len(a.rows) == len(FAST) * 2 * 2 * 2
    df = a.frame()
    assert df.groupby(["method", "replication", "group", "split"]).size().max() == 1
    assert list(df["method"].unique()) == list(FAST)


def test_summary_ci_formula():
    rows = [dict(experiment="e", axis="", value="base", method="fair", replication=r, group="g",
                 role="small", split="test", tuning="small", mse=v, hyperparameters="{}",
                 converged=True, iterations=1, max_kkt_violation=0.0)
            for r, v in enumerate([1.0, 2.0, 4.0])]
    s = summarize(rows).iloc[0]
    sd = np.std([1, 2, 4], ddof=1)
    assert s["mean"] == pytest.approx(7 / 3)
    assert s["ci_high"] - s["mean"] == pytest.approx(1.96 * sd / np.sqrt(3))
    assert s["n"] == 3


def test_sweep_rows_per_value():
    cfg = ExperimentConfig(kind="sweep", replications=1, methods=("indicator",), axis="num-small-groups")
    res = run_sweep(cfg, values=[1, 2])
    df = res.frame()
    # K = 2 and K = 3 groups, two splits each
    assert len(df) == (2 + 3) * 2
    assert sorted(df["value"].unique()) == [1, 2]
    assert set(df["axis"]) == {"num-small-groups"}
    with pytest.raises(ValueError):
        run_sweep(replace(cfg, axis=None))


def test_large_tuning_adds_rows():
    cfg = ExperimentConfig(replications=1, methods=("indicator",), large_tuning=True)
    df = run_base_case(cfg).frame()
    assert set(df["tuning"]) == {"small", "large"}
    assert len(df) == 2 * 2 * 2


def test_exported_coefficients_reproduce_predictions():
    train, test = generate(build_scenario(replace(ScenarioParams(), num_small_groups=2)), 0)
    model = fit_fair(train, {"large": 0.01, "small": 0.05, "small2": 0.02})
    table = coefficient_table(model, replication=3)
    assert {r["feature"] for r in table} >= {"(intercept)", "x1"}
    assert len(table) == 2 * (1 + train.m)
    rebuilt = predict_from_table(table, model.base_group, test.features, test.group_of,
                                 train.feature_names)
    np.testing.assert_allclose(rebuilt, model.predict(test.features, test.group_of), atol=1e-10)


@pytest.fixture
def three_group_csv(tmp_path):
    sc = build_scenario(replace(ScenarioParams(), n_large=400, n_small=160, num_small_groups=2,
                                num_covariates=6, num_uninformative=2, num_unshared=1))
    data, _ = generate(sc, 1)
    path = tmp_path / "d.csv"
    write_csv(data, path)
    return path, data


def _real_cfg(path, **kw):
    base = dict(kind="real-data", csv_path=str(path), large_label="large", small_label="small",
                train_large=200, train_small=60, test_per_group=100, replications=2,
                methods=FAST)
    base.update(kw)
    return ExperimentConfig(**base)


def test_real_data_filters_labels_and_exports(three_group_csv, tmp_path):
    path, data = three_group_csv
    cfg = _real_cfg(path, out_dir=str(tmp_path / "out"))
    res = run_real_data(cfg)
    df = res.frame()
    assert set(df["group"]) == {"large", "small"}
    assert len(df) == 2 * 2 * 2 * 2
    coefs = pd.read_csv(res.files["coefficients"])
    assert list(coefs.columns) == ["replication", "feature", "base_value", "group", "group_value"]
    assert set(coefs["group"]) == {"small"}
    assert sorted(coefs["replication"].unique()) == [0, 1]
    rng = np.random.default_rng(0)
    filtered = experiments.load_real_data(cfg)
    train, test = sample_real_data(filtered, cfg, rng)
    for part in (train, test):
        assert set(part.group_of.tolist()) == {"large", "small"}
    assert train.size_of("large") == 200 and test.size_of("small") == 100
    assert not set(map(tuple, train.features)) & set(map(tuple, test.features))


def test_real_data_file_matches_in_memory(three_group_csv):
    path, data = three_group_csv
    cfg = _real_cfg(path, replications=1)
    from_file = run_real_data(cfg)
    keep = data.mask("large") | data.mask("small")
    mem = data.subset(keep)
    rows, _, _ = experiments._real_task((mem, 0, cfg))
    assert [r["mse"] for r in rows] == [r["mse"] for r in from_file.rows if r["replication"] == 0]


def test_real_data_errors(three_group_csv):
    path, _ = three_group_csv
    with pytest.raises(ValueError, match="'small'.*rows"):
        run_real_data(_real_cfg(path, train_small=150))
    with pytest.raises(ValueError, match="'nope'"):
        run_real_data(_real_cfg(path, small_label="nope"))
    with pytest.raises(ValueError):
        run_real_data(_real_cfg(path, csv_path=None))


def test_timing_brackets_only_the_fit(monkeypatch):
    state = {"inside": False, "calls": 0}

    def clock():
        state["inside"] = not state["inside"]
        state["calls"] += 1
        return float(state["calls"])

    for name in ("generate", "tune", "sample_real_data"):
        original = getattr(experiments, name)

        def guarded(*a, _orig=original, **k):
            assert not state["inside"], "untimed work inside the timed region"
            return _orig(*a, **k)
        monkeypatch.setattr(experiments, name, guarded)

    cfg = ExperimentConfig(kind="timing", replications=3, methods=FAST)
    rows = run_timing(cfg, clock=clock)
    assert state["calls"] == 2 * 3 * len(FAST)
    assert [r["Method"] for r in rows] == list(FAST)
    assert all(r["Dataset"] == "Simulation" and r["MeanSeconds"] == 1.0 for r in rows)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(replications=0)
    with pytest.raises(ValueError):
        ExperimentConfig(methods=("lasso",))
    with pytest.raises(ValueError):
        ExperimentConfig(kind="other")
    with pytest.raises(ValueError):
        ExperimentConfig(axis="nope")
    with pytest.raises(ValueError, match="unknown config key"):
        ExperimentConfig.from_mapping({"bogus": 1})
    cfg = ExperimentConfig.from_mapping({"out-dir": "x", "methods": ["fair"]})
    assert cfg.out_dir == "x" and cfg.methods == ("fair",)


def test_unwritable_output_reports_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = ExperimentConfig(replications=1, methods=("indicator",), out_dir=str(blocker / "sub"))
    with pytest.raises(OSError, match="sub"):
        run_base_case(cfg)
