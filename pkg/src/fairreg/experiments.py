"""Experiment orchestration: base case, parameter sweeps, real-data protocol, timing.

Every experiment writes long-form CSV (one row per method, replication, group,
split) plus an aligned-text summary with 95% confidence intervals. Result files
depend only on the configuration and root seed, never on worker count or
wall-clock; fit times go to a separate file.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .core import GroupedDataset, group_mse
from .io import load_csv
from .simgen import (
    AXES,
    LARGE,
    SMALL,
    SimulationScenario,
    base_case,
    generate,
    replication_seed,
    sweep_scenarios,
)
from .solver import SolverSettings
from .tune import METHODS, TuningSpec, fit_with_params, tune

log = logging.getLogger(__name__)

RESULT_COLUMNS = ["experiment", "axis", "value", "method", "replication", "group", "role",
                  "split", "tuning", "mse", "hyperparameters", "converged", "iterations",
                  "max_kkt_violation"]
PILOT_SCENARIO = 10_000


@dataclass
class ExperimentConfig:
    kind: str = "base-case"
    methods: Tuple[str, ...] = METHODS
    replications: int = 50
    seed: int = 0
    out_dir: Optional[str] = None
    folds: int = 5
    axis: Optional[str] = None
    values: Optional[Tuple[float, ...]] = None
    workers: int = 1
    large_tuning: bool = False
    csv_path: Optional[str] = None
    outcome_col: str = "y"
    group_col: str = "group"
    large_label: Optional[str] = None
    small_label: Optional[str] = None
    train_large: int = 2000
    train_small: int = 200
    test_per_group: int = 2000
    tolerance: float = 1e-7

    def __post_init__(self):
        if self.kind not in ("base-case", "sweep", "real-data", "timing"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        self.methods = tuple(self.methods)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method(s) {bad}; choose from {METHODS}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.axis is not None and self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; choose from {sorted(AXES)}")
        if self.values is not None:
            self.values = tuple(self.values)

    @classmethod
    def from_mapping(cls, doc: Dict[str, Any]) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        clean = {k.replace("-", "_"): v for k, v in doc.items()}
        unknown = sorted(set(clean) - names)
        if unknown:
            raise ValueError(f"unknown config key(s) {unknown}")
        return cls(**clean)

    @property
    def settings(self) -> SolverSettings:
        return SolverSettings(tolerance=self.tolerance)


@dataclass
class ExperimentResult:
    rows: List[Dict[str, Any]]
    summary: pd.DataFrame
    fit_times: List[Dict[str, Any]] = field(default_factory=list)
    coefficients: List[Dict[str, Any]] = field(default_factory=list)
    files: Dict[str, Path] = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=RESULT_COLUMNS)


# one replication: tune every method, refit, evaluate


def _diag_summary(model) -> Tuple[bool, int, float]:
    d = model.diagnostics
    if isinstance(d, dict):
        return (all(v.converged for v in d.values()), max(v.iterations for v in d.values()),
                max(v.max_kkt_violation for v in d.values()))
    return d.converged, d.iterations, d.max_kkt_violation


def _fmt(v: float) -> str:
    return repr(float(v))


def _evaluate(method, model, params, train, test, roles, tuning, context) -> List[Dict[str, Any]]:
    conv, iters, kkt = _diag_summary(model)
    hp = json.dumps(params, sort_keys=True)
    rows = []
    for split, data in (("train", train), ("test", test)):
        gm = group_mse(model.predict(data.features, data.group_of), data)
        for g in data.group_ids:
            rows.append(dict(context, method=method, group=g, role=roles[g], split=split,
                             tuning=tuning, mse=gm[g], hyperparameters=hp, converged=conv,
                             iterations=iters, max_kkt_violation=kkt))
    return rows


def run_methods(train: GroupedDataset, test: GroupedDataset, methods: Sequence[str],
                roles: Dict[str, str], fold_seed: int, folds: int = 5,
                settings: Optional[SolverSettings] = None, large_tuning: bool = False,
                context: Optional[Dict[str, Any]] = None, base_group: Optional[str] = None):
    """Tune, refit and evaluate each method on one (train, test) draw.

    Returns (rows, fit_times, models) where ``models`` maps (method, tuning) to
    the refit model.
    """
    context = dict(context or {})
    small = [g for g in train.group_ids if roles[g] == SMALL]
    large = [g for g in train.group_ids if roles[g] == LARGE]
    base = base_group or (large[0] if large else "auto")
    tunings = [("small", small)] + ([("large", large)] if large_tuning else [])
    rows, times, models = [], [], {}
    for method in methods:
        for tuning, objective in tunings:
            spec = TuningSpec(method, folds, objective_groups=objective, seed=fold_seed,
                              settings=settings, base_group=base)
            params = tune(train, spec, refit=False).selected
            t0 = time.perf_counter()
            model = fit_with_params(method, train, params, settings, base)
            times.append(dict(context, method=method, tuning=tuning,
                              seconds=time.perf_counter() - t0))
            models[(method, tuning)] = model
            rows += _evaluate(method, model, params, train, test, roles, tuning, context)
    return rows, times, models


def _fold_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.spawn(1)[0].generate_state(1)[0])


def _simulation_task(args):
    scenario, s_index, value, rep, cfg, experiment = args
    ss = replication_seed(cfg.seed, s_index, rep)
    data_ss, fold_ss = ss.spawn(2)
    train, test = generate(scenario, data_ss)
    roles = {g.label: g.role for g in scenario.groups}
    context = {"experiment": experiment, "axis": cfg.axis or "", "value": value,
               "replication": rep}
    rows, times, _ = run_methods(train, test, cfg.methods, roles, _fold_seed(fold_ss), cfg.folds,
                                 cfg.settings, cfg.large_tuning, context)
    return rows, times


def _fan_out(func: Callable, tasks: List, workers: int) -> List:
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks))


def _order_rows(rows: List[Dict[str, Any]], methods: Sequence[str]) -> List[Dict[str, Any]]:
    """Stable order by (method, scenario, replication); group/split order is kept."""
    rank = {m: i for i, m in enumerate(methods)}
    return sorted(rows, key=lambda r: (rank[r["method"]], r.get("_scenario", 0), r["replication"]))


def summarize(rows: List[Dict[str, Any]]) -> pd.DataFrame:
    """Mean MSE and normal-approximation 95% CI per (value, method, group, split, tuning)."""
    df = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    keys = ["axis", "value", "method", "group", "role", "split", "tuning"]
    out = []
    for key, sub in df.groupby(keys, sort=False):
        x = sub["mse"].to_numpy(dtype=float)
        sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
        half = 1.96 * sd / np.sqrt(x.size)
        out.append(dict(zip(keys, key), n=x.size, mean=float(x.mean()), sd=sd,
                        ci_low=float(x.mean() - half), ci_high=float(x.mean() + half)))
    return pd.DataFrame(out)


def _write_rows(path: Path, rows: List[Dict[str, Any]], columns: Sequence[str]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


def _write_summary(path: Path, summary: pd.DataFrame):
    text = summary.to_string(index=False, float_format=lambda v: f"{v:.6f}")
    path.write_text(text + "\n", encoding="utf-8")


def _finish(cfg: ExperimentConfig, rows, times, name: str, coefficients=None) -> ExperimentResult:
    rows = _order_rows(rows, cfg.methods)
    for r in rows:
        r.pop("_scenario", None)
    summary = summarize(rows)
    result = ExperimentResult(rows, summary, times, coefficients or [])
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            result.files["results"] = out / f"{name}_results.csv"
            _write_rows(result.files["results"], rows, RESULT_COLUMNS)
            result.files["summary"] = out / f"{name}_summary.txt"
            _write_summary(result.files["summary"], summary)
            result.files["fit_times"] = out / f"{name}_fit_times.csv"
            tcols = ["experiment", "axis", "value", "replication", "method", "tuning", "seconds"]
            _write_rows(result.files["fit_times"], [{c: t.get(c, "") for c in tcols} for t in times], tcols)
            if coefficients:
                result.files["coefficients"] = out / f"{name}_coefficients.csv"
                _write_rows(result.files["coefficients"], coefficients, COEF_COLUMNS)
        except OSError as exc:
            raise OSError(f"cannot write results under {out}: {exc}") from exc
    return result


def _run_scenarios(cfg: ExperimentConfig, scenarios: List[Tuple[int, Any, SimulationScenario]],
                   experiment: str) -> ExperimentResult:
    tasks = [(sc, s, value, r, cfg, experiment)
             for s, value, sc in scenarios for r in range(cfg.replications)]
    rows, times = [], []
    for (sc, s, *_), (task_rows, task_times) in zip(tasks, _fan_out(_simulation_task, tasks, cfg.workers)):
        for row in task_rows:
            row["_scenario"] = s
        rows += task_rows
        times += task_times
    return _finish(cfg, rows, times, experiment)


def run_base_case(cfg: ExperimentConfig) -> ExperimentResult:
    """Tuned comparison of all methods on freshly drawn base-case data per replication."""
    return _run_scenarios(cfg, [(0, "base", base_case())], "base-case")


def run_sweep(cfg: ExperimentConfig, axis: Optional[str] = None,
              values: Optional[Sequence[float]] = None) -> ExperimentResult:
    """Base-case protocol repeated at each value of one simulation parameter."""
    axis = axis or cfg.axis
    if axis is None:
        raise ValueError("a sweep needs an axis")
    values = values if values is not None else cfg.values
    cfg = replace(cfg, axis=axis)
    scenarios = sweep_scenarios(axis, values)
    vals = [sc.params.__getattribute__(AXES[axis]) for sc in scenarios]
    return _run_scenarios(cfg, [(i + 1, v, sc) for i, (v, sc) in enumerate(zip(vals, scenarios))],
                          f"sweep-{axis}")


# real data

COEF_COLUMNS = ["replication", "feature", "base_value", "group", "group_value"]


def coefficient_table(model, replication: int = 0) -> List[Dict[str, Any]]:
    """FAIR coefficients in raw units: one row per (feature, non-base group)."""
    rows = []
    feats = ["(intercept)"] + list(model.feature_names)
    base_vals = [model.base.intercept] + list(model.base.weights)
    for g, blk in model.groups.items():
        gvals = [blk.intercept] + list(blk.weights)
        for f, b, v in zip(feats, base_vals, gvals):
            rows.append({"replication": replication, "feature": f, "base_value": float(b),
                         "group": g, "group_value": float(v)})
    return rows


def predict_from_table(rows: List[Dict[str, Any]], base_group: str, features: np.ndarray,
                       group_of, feature_names: Sequence[str]) -> np.ndarray:
    """Rebuild FAIR predictions from an exported coefficient table."""
    groups = sorted({r["group"] for r in rows})
    col = {f: i for i, f in enumerate(feature_names)}
    first = [r for r in rows if r["group"] == groups[0]]
    base_int = next(r["base_value"] for r in first if r["feature"] == "(intercept)")
    base_w = np.zeros(len(feature_names))
    for r in first:
        if r["feature"] != "(intercept)":
            base_w[col[r["feature"]]] = r["base_value"]
    g = np.asarray(group_of).astype(str)
    out = base_int + features @ base_w
    for grp in groups:
        sub = [r for r in rows if r["group"] == grp]
        gw = np.zeros(len(feature_names))
        gi = 0.0
        for r in sub:
            if r["feature"] == "(intercept)":
                gi = r["group_value"]
            else:
                gw[col[r["feature"]]] = r["group_value"]
        rows_g = g == grp
        out[rows_g] += gi + features[rows_g] @ gw
    return out


def sample_real_data(data: GroupedDataset, cfg: ExperimentConfig,
                     rng: np.random.Generator) -> Tuple[GroupedDataset, GroupedDataset]:
    """Draw disjoint train/test samples (without replacement) from the two labelled groups."""
    plan = [(cfg.large_label, cfg.train_large), (cfg.small_label, cfg.train_small)]
    train_idx, test_idx = [], []
    for label, n_train in plan:
        if label not in data.group_ids:
            raise ValueError(f"group {label!r} not found in column {cfg.group_col!r}")
        idx = np.flatnonzero(data.mask(label))
        need = n_train + cfg.test_per_group
        if idx.size < need:
            raise ValueError(f"group {label!r} has {idx.size} rows; {need} needed for "
                             f"{n_train} train + {cfg.test_per_group} test")
        pick = rng.permutation(idx)[:need]
        train_idx.append(np.sort(pick[:n_train]))
        test_idx.append(np.sort(pick[n_train:]))
    return data.subset(np.concatenate(train_idx)), data.subset(np.concatenate(test_idx))


def _real_task(args):
    data, rep, cfg = args
    ss = replication_seed(cfg.seed, 0, rep)
    data_ss, fold_ss = ss.spawn(2)
    train, test = sample_real_data(data, cfg, np.random.default_rng(data_ss))
    roles = {cfg.large_label: LARGE, cfg.small_label: SMALL}
    context = {"experiment": "real-data", "axis": "", "value": "", "replication": rep}
    rows, times, models = run_methods(train, test, cfg.methods, roles, _fold_seed(fold_ss),
                                      cfg.folds, cfg.settings, cfg.large_tuning, context,
                                      base_group=cfg.large_label)
    coefs = coefficient_table(models[("fair", "small")], rep) if "fair" in cfg.methods else []
    return rows, times, coefs


def load_real_data(cfg: ExperimentConfig) -> GroupedDataset:
    if not cfg.csv_path:
        raise ValueError("real-data experiments need csv_path")
    if not (cfg.large_label and cfg.small_label):
        raise ValueError("real-data experiments need large_label and small_label")
    data = load_csv(cfg.csv_path, cfg.outcome_col, cfg.group_col)
    for label in (cfg.large_label, cfg.small_label):
        if label not in data.group_ids:
            raise ValueError(f"{cfg.csv_path}: group {label!r} not found in column {cfg.group_col!r}")
    keep = data.mask(cfg.large_label) | data.mask(cfg.small_label)
    return data.subset(keep)


def run_real_data(cfg: ExperimentConfig) -> ExperimentResult:
    """Repeated subsampling protocol on a tabular CSV with a large and a small group."""
    data = load_real_data(cfg)
    tasks = [(data, r, cfg) for r in range(cfg.replications)]
    rows, times, coefs = [], [], []
    for task_rows, task_times, task_coefs in _fan_out(_real_task, tasks, cfg.workers):
        rows += task_rows
        times += task_times
        coefs += task_coefs
    return _finish(cfg, rows, times, "real-data", coefs)


# timing

TIMING_COLUMNS = ["Method", "Dataset", "MeanSeconds"]


def run_timing(cfg: ExperimentConfig, clock: Callable[[], float] = time.perf_counter,
               datasets: Optional[Sequence[str]] = None) -> List[Dict[str, Any]]:
    """Mean wall time of one fit per method at fixed, pre-tuned hyperparameters.

    Hyperparameters are tuned once on a pilot draw; data generation, sampling and
    tuning all happen outside the timed region, which brackets only the fit call.
    The method order rotates across replications.
    """
    if datasets is None:
        datasets = ["Simulation"] + (["RealData"] if cfg.csv_path else [])
    real = load_real_data(cfg) if "RealData" in datasets else None
    scenario = base_case()

    def draw(rep: int, scenario_index: int):
        ss = replication_seed(cfg.seed, scenario_index, rep)
        data_ss, _ = ss.spawn(2)
        if dataset == "Simulation":
            return generate(scenario, data_ss)[0], {g.label: g.role for g in scenario.groups}, None
        train, _ = sample_real_data(real, cfg, np.random.default_rng(data_ss))
        return train, {cfg.large_label: LARGE, cfg.small_label: SMALL}, cfg.large_label

    out = []
    for dataset in datasets:
        pilot, roles, base = draw(0, PILOT_SCENARIO)
        small = [g for g in pilot.group_ids if roles[g] == SMALL]
        base = base or next(g for g in pilot.group_ids if roles[g] == LARGE)
        params = {}
        for method in cfg.methods:
            spec = TuningSpec(method, cfg.folds, objective_groups=small, seed=cfg.seed,
                              settings=cfg.settings, base_group=base)
            params[method] = tune(pilot, spec, refit=False).selected
            fit_with_params(method, pilot, params[method], cfg.settings, base)  # compile/warm-up
        totals = {m: 0.0 for m in cfg.methods}
        for rep in range(cfg.replications):
            train, _, _ = draw(rep, 0)
            # rotate the order so no method always pays the cold-cache first fit
            k = rep % len(cfg.methods)
            for method in cfg.methods[k:] + cfg.methods[:k]:
                t0 = clock()
                fit_with_params(method, train, params[method], cfg.settings, base)
                totals[method] += clock() - t0
        for method in cfg.methods:
            out.append({"Method": method, "Dataset": dataset,
                        "MeanSeconds": totals[method] / cfg.replications})
    if cfg.out_dir:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        path = Path(cfg.out_dir) / "timing.csv"
        _write_rows(path, out, TIMING_COLUMNS)
    return out


def run(cfg: ExperimentConfig):
    if cfg.kind == "base-case":
        return run_base_case(cfg)
    if cfg.kind == "sweep":
        return run_sweep(cfg)
    if cfg.kind == "real-data":
        return run_real_data(cfg)
    return run_timing(cfg)
