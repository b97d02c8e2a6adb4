"""CSV datasets and JSON model files."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np

from .core import CoefficientBlock, FitDiagnostics, GroupedDataset
from .design import Scaling
from .fusion import JointLassoModel, JointLassoSpec
from .models import FairModel, IndicatorModel, SeparateModels

MODEL_FORMAT = "fairreg-model"
MODEL_VERSION = 1


class DataFormatError(ValueError):
    """Malformed input file; the message names the file and location."""


def load_csv(path, outcome_col: str, group_col: str,
             feature_cols: Optional[Sequence[str]] = None) -> GroupedDataset:
    """Read a header-first UTF-8 CSV into a :class:`GroupedDataset`.

    Every column other than the outcome and group columns is a numeric covariate
    (unless ``feature_cols`` narrows the selection). Column and row order are kept.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in (outcome_col, group_col):
            if col not in header:
                raise DataFormatError(f"{path}: missing column {col!r}")
        if feature_cols is None:
            feature_cols = [h for h in header if h not in (outcome_col, group_col)]
        else:
            absent = [c for c in feature_cols if c not in header]
            if absent:
                raise DataFormatError(f"{path}: missing column(s) {absent}")
        pos = {h: i for i, h in enumerate(header)}
        fidx = [pos[c] for c in feature_cols]
        yi, gi = pos[outcome_col], pos[group_col]
        X, y, g = [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: line {line} has {len(row)} fields, "
                                      f"expected {len(header)}")
            g.append(row[gi].strip())
            y.append(_number(row[yi], path, line, outcome_col))
            X.append([_number(row[i], path, line, header[i]) for i in fidx])
    if not y:
        raise DataFormatError(f"{path}: no data rows")
    feats = np.array(X, dtype=float).reshape(len(y), len(fidx))
    return GroupedDataset.build(feats, y, g, feature_cols)


def _number(cell: str, path, line: int, col: str) -> float:
    text = cell.strip()
    try:
        v = float(text)
    except ValueError:
        raise DataFormatError(f"{path}: line {line}, column {col!r}: "
                              f"non-numeric value {cell!r}") from None
    if not math.isfinite(v):
        raise DataFormatError(f"{path}: line {line}, column {col!r}: non-finite value {cell!r}")
    return v


def write_csv(data: GroupedDataset, path, outcome_col: str = "y", group_col: str = "group"):
    """Write ``data`` so that :func:`load_csv` reads it back bit-exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([group_col, outcome_col, *data.feature_names])
        for i in range(data.n):
            w.writerow([data.group_of[i], repr(float(data.outcome[i])),
                        *(repr(float(v)) for v in data.features[i])])


# model files


def _block(b: CoefficientBlock) -> Dict[str, Any]:
    return {"intercept": float(b.intercept), "weights": [float(v) for v in b.weights],
            "penalized": [bool(v) for v in b.penalized_mask]}


def _diag(d: FitDiagnostics) -> Dict[str, Any]:
    return {"iterations": int(d.iterations), "final_objective": float(d.final_objective),
            "converged": bool(d.converged), "max_kkt_violation": float(d.max_kkt_violation)}


def _scaling(s: Scaling) -> Dict[str, Any]:
    return {"centers": [float(v) for v in s.centers], "scales": [float(v) for v in s.scales]}


def model_to_dict(model) -> Dict[str, Any]:
    doc: Dict[str, Any] = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "kind": model.kind,
                           "feature_names": list(model.feature_names)}
    if isinstance(model, FairModel):
        doc.update(base_group=model.base_group, scaling=_scaling(model.scaling),
                   hyperparameters={"lambdas": dict(model.lambdas)},
                   base=_block(model.base),
                   groups={g: _block(b) for g, b in model.groups.items()},
                   diagnostics=_diag(model.diagnostics))
    elif isinstance(model, SeparateModels):
        doc.update(hyperparameters={"lambdas": dict(model.lambdas)},
                   groups={g: _block(b) for g, b in model.blocks.items()},
                   scalings={g: _scaling(s) for g, s in model.scalings.items()},
                   diagnostics={g: _diag(d) for g, d in model.diagnostics.items()})
    elif isinstance(model, IndicatorModel):
        doc.update(base_group=model.base_group, scaling=_scaling(model.scaling),
                   hyperparameters={"lambda": model.lam}, base=_block(model.block),
                   dummies=dict(model.dummies), diagnostics=_diag(model.diagnostics))
    elif isinstance(model, JointLassoModel):
        spec = model.spec
        doc.update(scaling=_scaling(model.scaling),
                   hyperparameters={"lambda": spec.lam, "gamma": spec.gamma,
                                    "tau": None if spec.tau is None else spec.tau.tolist()},
                   groups={g: _block(b) for g, b in model.blocks.items()},
                   diagnostics=_diag(model.diagnostics))
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return doc


def save_model(model, path) -> None:
    """Write a JSON model document (floats keep all 17 significant digits)."""
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def _read_block(d, m: int, where: str) -> CoefficientBlock:
    w = d["weights"]
    if len(w) != m:
        raise DataFormatError(f"{where}: {len(w)} weights for {m} covariates")
    return CoefficientBlock(float(d["intercept"]), np.array(w, dtype=float),
                            np.array(d.get("penalized", [True] * m), dtype=bool))


def _read_diag(d) -> FitDiagnostics:
    return FitDiagnostics(int(d["iterations"]), float(d["final_objective"]),
                          bool(d["converged"]), float(d["max_kkt_violation"]))


def _read_scaling(d, m: int, where: str) -> Scaling:
    c, s = np.array(d["centers"], dtype=float), np.array(d["scales"], dtype=float)
    if c.shape != (m,) or s.shape != (m,):
        raise DataFormatError(f"{where}: scaling does not match {m} covariates")
    return Scaling(c, s)


def model_from_dict(doc: Dict[str, Any], source: str = "<model>"):
    if doc.get("format") != MODEL_FORMAT:
        raise DataFormatError(f"{source}: not a {MODEL_FORMAT} document")
    if doc.get("version") != MODEL_VERSION:
        raise DataFormatError(f"{source}: unsupported model version {doc.get('version')!r}")
    names = tuple(doc["feature_names"])
    m = len(names)
    kind = doc["kind"]
    hp = doc["hyperparameters"]
    try:
        if kind == "fair":
            groups = {g: _read_block(b, m, f"{source}: group {g!r}") for g, b in doc["groups"].items()}
            return FairModel(_read_block(doc["base"], m, f"{source}: base block"), groups,
                             doc["base_group"], names, _read_scaling(doc["scaling"], m, source),
                             _read_diag(doc["diagnostics"]),
                             {g: float(v) for g, v in hp["lambdas"].items()})
        if kind == "separate":
            return SeparateModels(
                {g: _read_block(b, m, f"{source}: group {g!r}") for g, b in doc["groups"].items()},
                {g: float(v) for g, v in hp["lambdas"].items()},
                {g: _read_diag(d) for g, d in doc["diagnostics"].items()}, names,
                {g: _read_scaling(s, m, source) for g, s in doc["scalings"].items()})
        if kind == "indicator":
            return IndicatorModel(_read_block(doc["base"], m, f"{source}: base block"),
                                  {g: float(v) for g, v in doc["dummies"].items()},
                                  doc["base_group"], float(hp["lambda"]),
                                  _read_diag(doc["diagnostics"]), names,
                                  _read_scaling(doc["scaling"], m, source))
        if kind == "joint":
            tau = None if hp.get("tau") is None else np.array(hp["tau"], dtype=float)
            return JointLassoModel(
                {g: _read_block(b, m, f"{source}: group {g!r}") for g, b in doc["groups"].items()},
                JointLassoSpec(float(hp["lambda"]), float(hp["gamma"]), tau),
                _read_diag(doc["diagnostics"]), names, _read_scaling(doc["scaling"], m, source))
    except KeyError as exc:
        raise DataFormatError(f"{source}: missing field {exc.args[0]!r}") from None
    raise DataFormatError(f"{source}: unknown model kind {kind!r}")


def load_model(path, expected_features: Optional[Sequence[str]] = None):
    """Read a model written by :func:`save_model`.

    ``expected_features`` (names or just a count via ``range``) guards against
    applying a model to data with a different covariate layout.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot open ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    model = model_from_dict(doc, str(path))
    if expected_features is not None:
        expected = list(expected_features)
        if len(expected) != len(model.feature_names):
            raise DataFormatError(f"{path}: model has {len(model.feature_names)} covariates, "
                                  f"data has {len(expected)}")
    return model
