"""Cross-validated grid search selecting by average small-group MSE.

Grid points are plain dicts:

* fair      ``{"lambdas": {group: value, ...}}``
* separate  ``{"group": g, "lambda": value}`` (each group tuned on its own MSE)
* indicator ``{"lambda": value}``
* joint     ``{"lambda": value, "gamma": value}``
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .core import GroupedDataset, group_mse
from .design import (AUTO, assemble_penalty_factors, build_fair_design, build_indicator_design,
                     choose_base_group, dataset_codes)
from .fusion import JointLassoSpec, build_joint_design, fit_joint, joint_problem
from .models import fit_fair, fit_indicator, fit_separate
from .solver import PenalizedProblem, SolverSettings, lambda_max, solve

METHODS = ("fair", "separate", "indicator", "joint")
GRID_SIZE = 12
GRID_RATIO = 1e-3
GAMMA_RANGE = (1e-3, 1e2)
GAMMA_SIZE = 8
TIE_TOL = 1e-10


@dataclass(frozen=True)
class TuningSpec:
    method: str
    folds: int = 5
    grid: Optional[Dict[str, Any]] = None
    objective_groups: Optional[Sequence[str]] = None
    seed: int = 0
    settings: Optional[SolverSettings] = None
    base_group: str = AUTO

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")


@dataclass
class TuningReport:
    method: str
    points: List[Dict[str, Any]]
    fold_mse: np.ndarray
    mean_mse: np.ndarray
    rank: np.ndarray
    selected: Dict[str, Any]
    selected_index: List[int]
    objective_groups: List[str]
    model: Any = field(default=None, repr=False)

    def rows(self) -> List[Dict[str, Any]]:
        out = []
        for i, pt in enumerate(self.points):
            out.append({"point": pt, "fold_mse": self.fold_mse[i].tolist(),
                        "mean_mse": float(self.mean_mse[i]), "rank": int(self.rank[i]),
                        "selected": i in self.selected_index})
        return out


def make_folds(data: GroupedDataset, folds: int, seed: int = 0) -> np.ndarray:
    """Fold id per sample, stratified so each group is split as evenly as possible."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    for g, n_k in zip(data.group_ids, data.group_sizes):
        if n_k < folds:
            raise ValueError(f"group {g!r} has {n_k} samples, fewer than {folds} folds")
    rng = np.random.default_rng(seed)
    out = np.empty(data.n, dtype=np.int64)
    for g in data.group_ids:
        idx = np.flatnonzero(data.mask(g))
        perm = rng.permutation(idx.shape[0])
        out[idx[perm]] = np.arange(idx.shape[0]) % folds
    return out


def lambda_axis(lmax: float) -> List[float]:
    """12 log-spaced values from ``lmax`` down to ``lmax * 1e-3``, then 0."""
    if lmax <= 0:
        return [0.0]
    return [float(v) for v in np.geomspace(lmax, lmax * GRID_RATIO, GRID_SIZE)] + [0.0]


def fair_block_lambda_max(data: GroupedDataset, base_group: str = AUTO) -> Dict[str, float]:
    """Entry threshold of each FAIR block when every penalized coefficient is zero."""
    design = build_fair_design(data, base_group, standardize=True)
    out = {}
    for g in design.group_order:
        sl = design.block_slice(g)
        cols = list(range(sl.start, sl.stop))
        if g == design.base_group:
            cols = cols[1:]
        if not cols:
            out[g] = 0.0
            continue
        X = np.column_stack([design.expanded[:, 0], design.expanded[:, cols]])
        pf = np.ones(X.shape[1])
        pf[0] = 0.0
        out[g] = lambda_max(PenalizedProblem(X, data.outcome, design.sample_weight, pf))
    return out


def _single_lasso_lambda_max(X, y) -> float:
    n, m = X.shape
    if m == 0:
        return 0.0
    w = np.full(n, 1.0 / n)
    wn = w / w.sum()
    mu = wn @ X
    sd = np.sqrt(wn @ (X - mu) ** 2)
    sd = np.where(sd > 1e-12 * np.maximum(np.abs(mu), 1.0), sd, 1.0)
    Z = np.column_stack([np.ones(n), (X - mu) / sd])
    pf = np.ones(m + 1)
    pf[0] = 0.0
    return lambda_max(PenalizedProblem(Z, y, w, pf))


def default_grid(method: str, data: GroupedDataset, base_group: str = AUTO) -> Dict[str, Any]:
    """Per-axis grids anchored at the data's lambda_max (see :func:`lambda_axis`)."""
    if method == "fair":
        return {"lambdas": {g: lambda_axis(v) for g, v in fair_block_lambda_max(data, base_group).items()}}
    if method == "separate":
        return {"lambdas": {g: lambda_axis(_single_lasso_lambda_max(data.features[data.mask(g)],
                                                                     data.outcome[data.mask(g)]))
                            for g in data.group_ids}}
    if method == "indicator":
        d = build_indicator_design(data, base_group, standardize=True)
        if d.expanded.shape[1] == 1:
            return {"lambda": [0.0]}
        lmax = lambda_max(PenalizedProblem(d.expanded, data.outcome, d.sample_weight, d.penalty_factor))
        return {"lambda": lambda_axis(lmax)}
    if method == "joint":
        d = build_joint_design(data, standardize=True)
        if data.m == 0:
            return {"lambda": [0.0], "gamma": [0.0]}
        lmax = lambda_max(PenalizedProblem(d.expanded, data.outcome, d.sample_weight, d.penalty_factor))
        scale = _fusion_scale(d, data)
        gammas = [0.0] + [float(v) * scale for v in np.geomspace(*GAMMA_RANGE, GAMMA_SIZE)]
        return {"lambda": lambda_axis(lmax), "gamma": gammas}
    raise ValueError(f"unknown method {method!r}")


def _fusion_scale(design, data) -> float:
    """Average per-coefficient loss curvature, so gamma is expressed relative to the data."""
    X = design.expanded
    col = design.sample_weight @ X**2
    slopes = design.penalty_factor > 0
    return float(np.mean(col[slopes])) if np.any(slopes) else 1.0


def penalty_total(method: str, point: Dict[str, Any]) -> tuple:
    if method == "fair":
        return (sum(point["lambdas"].values()), 0.0)
    if method == "joint":
        return (point["lambda"], point["gamma"])
    return (point["lambda"], 0.0)


def fit_with_params(method: str, data: GroupedDataset, params: Dict[str, Any],
                    settings: Optional[SolverSettings] = None, base_group: str = AUTO):
    """Fit ``method`` on ``data`` at fixed hyperparameters (as selected by :func:`tune`)."""
    if method == "fair":
        return fit_fair(data, params["lambdas"], settings, base_group=base_group)
    if method == "separate":
        return fit_separate(data, params["lambdas"], settings)
    if method == "indicator":
        return fit_indicator(data, params["lambda"], settings, base_group=base_group)
    if method == "joint":
        return fit_joint(data, JointLassoSpec(params["lambda"], params["gamma"]), settings)
    raise ValueError(f"unknown method {method!r}")


# per-fold fitters: build the design once, then solve at many grid points


class _FairPath:
    def __init__(self, train, settings, base_group):
        self.d = build_fair_design(train, base_group, standardize=True)
        self.y = train.outcome
        self.settings = settings
        self.blocks = self.d.coordinate_blocks()
        self.rows = dataset_codes(train, self.d.group_order)

    def fit(self, point, warm):
        scale, pf = assemble_penalty_factors(self.d, point["lambdas"])
        prob = PenalizedProblem(self.d.expanded, self.y, self.d.sample_weight, pf, 1, scale)
        return solve(prob, settings=self.settings, warm_start=warm, blocks=self.blocks,
                     row_group=self.rows)[0]

    def predict(self, beta, test):
        return self.d.transform(test.features, test.group_of) @ beta


class _IndicatorPath:
    def __init__(self, train, settings, base_group):
        self.d = build_indicator_design(train, base_group, standardize=True)
        self.y = train.outcome
        self.settings = settings

    def fit(self, point, warm):
        prob = PenalizedProblem(self.d.expanded, self.y, self.d.sample_weight,
                                self.d.penalty_factor, 1, point["lambda"])
        return solve(prob, settings=self.settings, warm_start=warm)[0]

    def predict(self, beta, test):
        return self.d.transform(test.features, test.group_of) @ beta


class _JointPath:
    def __init__(self, train, settings, base_group):
        self.d = build_joint_design(train, standardize=True)
        self.y = train.outcome
        self.settings = settings

    def fit(self, point, warm):
        prob, extra, blocks = joint_problem(self.d, self.y, JointLassoSpec(point["lambda"], point["gamma"]))
        return solve(prob, extra, self.settings, warm_start=warm, blocks=blocks)[0]

    def predict(self, beta, test):
        return self.d.transform(test.features, test.group_of) @ beta


class _SinglePath:
    """Lasso on one group's rows (separate-models baseline)."""

    def __init__(self, train, settings, group):
        rows = train.mask(group)
        X = train.features[rows]
        n, m = X.shape
        self.w = np.full(n, 1.0 / n)
        wn = self.w / self.w.sum()
        self.mu = wn @ X
        sd = np.sqrt(wn @ (X - self.mu) ** 2)
        self.sd = np.where(sd > 1e-12 * np.maximum(np.abs(self.mu), 1.0), sd, 1.0)
        self.Z = np.column_stack([np.ones(n), (X - self.mu) / self.sd])
        self.pf = np.ones(m + 1)
        self.pf[0] = 0.0
        self.y = train.outcome[rows]
        self.group = group
        self.settings = settings

    def fit(self, point, warm):
        prob = PenalizedProblem(self.Z, self.y, self.w, self.pf, 1, point["lambda"])
        return solve(prob, settings=self.settings, warm_start=warm)[0]

    def predict(self, beta, test):
        rows = test.mask(self.group)
        Z = np.column_stack([np.ones(int(rows.sum())), (test.features[rows] - self.mu) / self.sd])
        pred = np.full(test.n, np.nan)
        pred[rows] = Z @ beta
        return pred


class _FoldState:
    def __init__(self, path, test):
        self.path = path
        self.test = test
        self.warm = None


def _score(pred, test: GroupedDataset, groups) -> float:
    vals = []
    for g in groups:
        rows = test.mask(g)
        vals.append(float(np.mean((pred[rows] - test.outcome[rows]) ** 2)))
    return float(np.mean(vals))


def _evaluate(states: List[_FoldState], points, groups) -> np.ndarray:
    scores = np.full((len(points), len(states)), np.nan)
    for f, st in enumerate(states):
        for i, pt in enumerate(points):
            try:
                beta = st.path.fit(pt, st.warm)
                pred = st.path.predict(beta, st.test)
                s = _score(pred, st.test, groups)
            except (ValueError, np.linalg.LinAlgError, FloatingPointError):
                continue
            if np.isfinite(s) and np.all(np.isfinite(beta)):
                scores[i, f] = s
                st.warm = beta
    return scores


def _select(method, points, means) -> int:
    valid = np.flatnonzero(np.isfinite(means))
    if valid.size == 0:
        raise RuntimeError("every grid point failed in at least one fold")
    best = np.min(means[valid])
    near = [i for i in valid if means[i] - best <= TIE_TOL * max(1.0, abs(best))]
    # most regularized among ties; grid order breaks remaining ties
    return max(near, key=lambda i: (penalty_total(method, points[i]), -i))


def _ranks(means: np.ndarray) -> np.ndarray:
    rank = np.zeros(means.shape[0], dtype=np.int64)
    valid = np.flatnonzero(np.isfinite(means))
    order = valid[np.argsort(means[valid], kind="stable")]
    rank[order] = np.arange(1, order.size + 1)
    return rank


def default_objective_groups(data: GroupedDataset) -> List[str]:
    """Groups smaller than the largest one; every group when all are the same size."""
    top = max(data.group_sizes)
    small = [g for g, n_k in zip(data.group_ids, data.group_sizes) if n_k < top]
    return small or list(data.group_ids)


def _cartesian(axes: Dict[str, List[float]], order) -> List[Dict[str, Any]]:
    return [{"lambdas": dict(zip(order, combo))}
            for combo in itertools.product(*(axes[g] for g in order))]


def tune(data: GroupedDataset, spec: TuningSpec, refit: bool = True) -> TuningReport:
    """Grid search by K-fold CV; the selected point is refit on all of ``data``."""
    method = spec.method
    base = choose_base_group(data, spec.base_group) if method in ("fair", "indicator") else spec.base_group
    groups = list(spec.objective_groups) if spec.objective_groups else default_objective_groups(data)
    unknown = [g for g in groups if g not in data.group_ids]
    if unknown:
        raise ValueError(f"objective groups not in data: {unknown}")
    grid = spec.grid if spec.grid is not None else default_grid(method, data, base)
    fold_id = make_folds(data, spec.folds, spec.seed)
    splits = [(data.subset(fold_id != f), data.subset(fold_id == f)) for f in range(spec.folds)]
    settings = spec.settings

    if method == "separate":
        points, scores, chosen = [], [], []
        for g in data.group_ids:
            states = [_FoldState(_SinglePath(tr, settings, g), te) for tr, te in splits]
            pts = [{"group": g, "lambda": float(v)} for v in grid["lambdas"][g]]
            sc = _evaluate(states, pts, [g])
            means = np.nanmean(sc, axis=1) if sc.size else np.zeros(0)
            means[np.any(np.isnan(sc), axis=1)] = np.nan
            chosen.append(len(points) + _select(method, pts, means))
            points += pts
            scores.append(sc)
        scores = np.vstack(scores)
        means = np.mean(scores, axis=1)
        selected = {"lambdas": {points[i]["group"]: points[i]["lambda"] for i in chosen}}
        rank = np.zeros(len(points), dtype=np.int64)
        for g in data.group_ids:
            idx = np.array([i for i, p in enumerate(points) if p["group"] == g])
            rank[idx] = _ranks(means[idx])
        model = fit_with_params(method, data, selected, settings) if refit else None
        return TuningReport(method, points, scores, means, rank, selected, chosen, groups, model)

    path_cls = {"fair": _FairPath, "indicator": _IndicatorPath, "joint": _JointPath}[method]
    states = [_FoldState(path_cls(tr, settings, base), te) for tr, te in splits]

    if method == "fair":
        axes = {g: [float(v) for v in vals] for g, vals in grid["lambdas"].items()}
        order = [base] + [g for g in data.group_ids if g != base]
        if len(order) <= 3:
            points = _cartesian(axes, order)
            scores = _evaluate(states, points, groups)
        else:
            points, scores = _alternate(states, axes, order, groups)
    elif method == "indicator":
        points = [{"lambda": float(v)} for v in grid["lambda"]]
        scores = _evaluate(states, points, groups)
    else:
        points = [{"lambda": float(l), "gamma": float(gm)}
                  for gm in grid["gamma"] for l in grid["lambda"]]
        scores = _evaluate(states, points, groups)

    means = np.mean(scores, axis=1)
    idx = _select(method, points, means)
    selected = points[idx]
    model = fit_with_params(method, data, selected, settings, base) if refit else None
    return TuningReport(method, points, scores, means, _ranks(means), dict(selected), [idx],
                        groups, model)


def _alternate(states, axes, order, groups, passes: int = 2):
    """Coordinate-wise search: tune one group's lambda at a time, other groups held fixed."""
    current = {g: axes[g][len(axes[g]) // 2] for g in order}
    cache: Dict[tuple, np.ndarray] = {}
    points: List[Dict[str, Any]] = []
    for _ in range(passes):
        for g in order:
            batch = []
            for v in axes[g]:
                pt = dict(current)
                pt[g] = v
                batch.append(pt)
            todo = [pt for pt in batch if tuple(pt[k] for k in order) not in cache]
            if todo:
                sc = _evaluate(states, [{"lambdas": pt} for pt in todo], groups)
                for pt, row in zip(todo, sc):
                    key = tuple(pt[k] for k in order)
                    cache[key] = row
                    points.append({"lambdas": pt})
            cand = [{"lambdas": pt} for pt in batch]
            means = np.array([np.mean(cache[tuple(pt[k] for k in order)]) for pt in batch])
            current = dict(batch[_select("fair", cand, means)])
    scores = np.vstack([cache[tuple(p["lambdas"][k] for k in order)] for p in points])
    return points, scores
