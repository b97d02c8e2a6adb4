"""Command-line entry point: ``fairreg <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from .core import group_mse
from .design import AUTO
from .experiments import (
    ExperimentConfig,
    run_base_case,
    run_real_data,
    run_sweep,
    run_timing,
)
from .io import load_csv, load_model, save_model, write_csv
from .simgen import AXES, ScenarioParams, build_scenario, generate
from .solver import SolverSettings
from .tune import METHODS, TuningSpec, fit_with_params, tune

log = logging.getLogger("fairreg")


def _read_config(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"{path}: cannot read config ({exc.strerror})") from None
    doc = yaml.safe_load(text) or {}
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return doc


def _overrides(args) -> Dict[str, Any]:
    keys = ["seed", "replications", "methods", "out_dir", "folds", "axis", "train_large",
            "train_small", "test_per_group", "outcome_col", "group_col", "large_label",
            "small_label", "workers", "csv_path", "values"]
    out = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    if getattr(args, "large_tuning", False):
        out["large_tuning"] = True
    return out


def _experiment_config(args, kind: str) -> ExperimentConfig:
    doc = _read_config(args.config)
    doc.update(_overrides(args))
    doc["kind"] = kind
    return ExperimentConfig.from_mapping(doc)


def _report(result, stream=None):
    stream = stream or sys.stdout
    test = result.summary[result.summary["split"] == "test"]
    print(test.to_string(index=False, float_format=lambda v: f"{v:.4f}"), file=stream)
    for name, path in result.files.items():
        print(f"wrote {name}: {path}", file=stream)


# subcommands


def cmd_simulate(args) -> int:
    params = ScenarioParams(n_small=args.small_size, n_large=args.large_size,
                            test_size=args.test_size)
    if args.axis is not None:
        if args.value is None:
            raise ValueError("--axis needs --value")
        field = AXES[args.axis]
        params = replace(params, **{field: type(getattr(params, field))(args.value)})
    train, test = generate(build_scenario(params), args.seed)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_csv(train, out / "train.csv", args.outcome_col, args.group_col)
    write_csv(test, out / "test.csv", args.outcome_col, args.group_col)
    print(f"wrote {out / 'train.csv'} ({train.n} rows) and {out / 'test.csv'} ({test.n} rows)")
    return 0


def _params_from_args(args, data) -> Dict[str, Any]:
    if args.method in ("fair", "separate"):
        if args.lambdas:
            lams = json.loads(args.lambdas)
        elif args.lam is not None:
            lams = {g: args.lam for g in data.group_ids}
        else:
            raise ValueError(f"{args.method} needs --lambda or --lambdas")
        return {"lambdas": {g: float(v) for g, v in lams.items()}}
    if args.lam is None:
        raise ValueError(f"{args.method} needs --lambda")
    params = {"lambda": args.lam}
    if args.method == "joint":
        params["gamma"] = 0.0 if args.gamma is None else args.gamma
    return params


def _settings(args) -> SolverSettings:
    return SolverSettings(tolerance=args.tolerance)


def cmd_fit(args) -> int:
    data = load_csv(args.data, args.outcome_col, args.group_col)
    params = _params_from_args(args, data)
    model = fit_with_params(args.method, data, params, _settings(args), args.base_group)
    for g, v in group_mse(model.predict(data.features, data.group_of), data).items():
        print(f"train mse {g}: {v:.6f}")
    if args.model_out:
        save_model(model, args.model_out)
        print(f"wrote model: {args.model_out}")
    return 0


def cmd_tune(args) -> int:
    data = load_csv(args.data, args.outcome_col, args.group_col)
    groups = args.objective_groups.split(",") if args.objective_groups else None
    spec = TuningSpec(args.method, args.folds or 5, objective_groups=groups, seed=args.seed or 0,
                      settings=_settings(args), base_group=args.base_group)
    report = tune(data, spec)
    print(f"objective groups: {','.join(report.objective_groups)}")
    print(f"selected: {json.dumps(report.selected, sort_keys=True)}")
    print(f"cv mse: {float(np.min(report.mean_mse)):.6f}")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "tuning.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["point", "mean_mse", "rank", "selected"])
            for row in report.rows():
                w.writerow([json.dumps(row["point"], sort_keys=True), repr(row["mean_mse"]),
                            row["rank"], row["selected"]])
        save_model(report.model, out / "model.json")
        print(f"wrote {out / 'tuning.csv'} and {out / 'model.json'}")
    return 0


def cmd_predict(args) -> int:
    data = load_csv(args.data, args.outcome_col, args.group_col)
    model = load_model(args.model, data.feature_names)
    pred = model.predict(data.features, data.group_of, allow_unseen=args.allow_unseen)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([args.group_col, "prediction"])
            for g, p in zip(data.group_of, pred):
                w.writerow([g, repr(float(p))])
        print(f"wrote predictions: {args.out}")
    for g, v in group_mse(pred, data).items():
        print(f"mse {g}: {v:.6f}")
    return 0


def cmd_base_case(args) -> int:
    _report(run_base_case(_experiment_config(args, "base-case")))
    return 0


def cmd_sweep(args) -> int:
    cfg = _experiment_config(args, "sweep")
    if cfg.axis is None:
        raise ValueError("sweep needs --axis")
    _report(run_sweep(cfg))
    return 0


def cmd_real_data(args) -> int:
    _report(run_real_data(_experiment_config(args, "real-data")))
    return 0


def cmd_timing(args) -> int:
    rows = run_timing(_experiment_config(args, "timing"))
    print(f"{'Method':<10} {'Dataset':<12} {'MeanSeconds':>12}")
    for r in rows:
        print(f"{r['Method']:<10} {r['Dataset']:<12} {r['MeanSeconds']:>12.6f}")
    return 0


def _methods(text: str) -> List[str]:
    return [m.strip() for m in text.split(",") if m.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairreg", description="Grouped penalized regression experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def data_flags(sp, data=True):
        if data:
            sp.add_argument("--data", required=True, help="CSV with a header row")
        sp.add_argument("--outcome-col", default="y")
        sp.add_argument("--group-col", default="group")

    def experiment_flags(sp):
        sp.add_argument("--config", help="YAML or JSON experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replications", type=int)
        sp.add_argument("--methods", type=_methods, help="comma-separated, e.g. fair,joint")
        sp.add_argument("--out-dir")
        sp.add_argument("--folds", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--large-tuning", action="store_true",
                        help="also tune on the large groups' error")

    sp = sub.add_parser("simulate", help="write scenario train/test CSVs")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir")
    sp.add_argument("--axis", choices=sorted(AXES))
    sp.add_argument("--value", type=float)
    sp.add_argument("--large-size", type=int, default=300)
    sp.add_argument("--small-size", type=int, default=100)
    sp.add_argument("--test-size", type=int, default=1000)
    data_flags(sp, data=False)
    sp.set_defaults(func=cmd_simulate)

    for name, func in (("fit", cmd_fit), ("tune", cmd_tune)):
        sp = sub.add_parser(name)
        data_flags(sp)
        sp.add_argument("--method", choices=METHODS, required=True)
        sp.add_argument("--base-group", default=AUTO)
        sp.add_argument("--tolerance", type=float, default=1e-7)
        if name == "fit":
            sp.add_argument("--lambda", dest="lam", type=float)
            sp.add_argument("--lambdas", help='JSON map group -> lambda, e.g. {"a": 0.1}')
            sp.add_argument("--gamma", type=float)
            sp.add_argument("--model-out")
        else:
            sp.add_argument("--folds", type=int)
            sp.add_argument("--seed", type=int)
            sp.add_argument("--objective-groups", help="comma-separated group ids")
            sp.add_argument("--out-dir")
        sp.set_defaults(func=func)

    sp = sub.add_parser("predict")
    data_flags(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out")
    sp.add_argument("--allow-unseen", action="store_true")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("base-case")
    experiment_flags(sp)
    sp.set_defaults(func=cmd_base_case)

    sp = sub.add_parser("sweep")
    experiment_flags(sp)
    sp.add_argument("--axis", choices=sorted(AXES))
    sp.add_argument("--values", type=lambda s: [float(v) for v in s.split(",")])
    sp.set_defaults(func=cmd_sweep)

    for name, func in (("real-data", cmd_real_data), ("timing", cmd_timing)):
        sp = sub.add_parser(name)
        experiment_flags(sp)
        sp.add_argument("--csv", dest="csv_path")
        sp.add_argument("--outcome-col")
        sp.add_argument("--group-col")
        sp.add_argument("--large-label")
        sp.add_argument("--small-label")
        sp.add_argument("--train-large", type=int)
        sp.add_argument("--train-small", type=int)
        sp.add_argument("--test-per-group", type=int)
        sp.set_defaults(func=func)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"fairreg {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
