"""FAIR and the two baseline estimators, each with a ``predict`` method."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .core import CoefficientBlock, FitDiagnostics, GroupedDataset
from .design import (
    AUTO,
    Scaling,
    assemble_penalty_factors,
    build_fair_design,
    build_indicator_design,
    dataset_codes,
    split_coefficients,
)
from .solver import PenalizedProblem, SolverSettings, solve


def _check_features(features, m: int) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, m) if m else X.reshape(-1, 0)
    if X.ndim != 2 or X.shape[1] != m:
        raise ValueError(f"expected {m} covariates, got array of shape {X.shape}")
    return X


def _check_group_sizes(data: GroupedDataset, minimum: int = 2):
    for g, n_k in zip(data.group_ids, data.group_sizes):
        if n_k < minimum:
            raise ValueError(f"group {g!r} has {n_k} sample(s); at least {minimum} are required")


def _lambda_map(lambdas, groups) -> Dict[str, float]:
    if isinstance(lambdas, Mapping):
        return {g: float(lambdas[g]) for g in groups if g in lambdas}
    return {g: float(lambdas) for g in groups}


@dataclass(frozen=True)
class FairModel:
    """Fitted FAIR model; coefficient blocks are in raw covariate units."""

    base: CoefficientBlock
    groups: Dict[str, CoefficientBlock]
    base_group: str
    feature_names: Tuple[str, ...]
    scaling: Scaling
    diagnostics: FitDiagnostics
    lambdas: Dict[str, float]
    coef_: Optional[np.ndarray] = field(default=None, repr=False)

    kind = "fair"

    @property
    def group_ids(self) -> Tuple[str, ...]:
        return (self.base_group,) + tuple(self.groups)

    def predict(self, features, group_of, allow_unseen: bool = False) -> np.ndarray:
        X = _check_features(features, len(self.feature_names))
        g = np.asarray(group_of).astype(str).ravel()
        if g.shape[0] != X.shape[0]:
            raise ValueError("group_of must have one entry per row")
        out = self.base.intercept + X @ self.base.weights
        known = g == self.base_group
        for k, blk in self.groups.items():
            rows = g == k
            known |= rows
            out[rows] += blk.intercept + X[rows] @ blk.weights
        if not allow_unseen and not np.all(known):
            raise ValueError(f"unseen group(s) {sorted(set(g[~known].tolist()))}")
        return out


def fit_fair(
    data: GroupedDataset,
    lambdas: Union[float, Mapping[str, float]],
    settings: Optional[SolverSettings] = None,
    base_group: str = AUTO,
    standardize: bool = True,
    warm_start=None,
) -> FairModel:
    """Fit the interaction lasso with 1/n_k weights and a penalty per group block.

    ``lambdas`` maps every group id to its penalty (a scalar applies to all).
    The base group's penalty covers its covariates; every other group's penalty
    covers its intercept offset and interaction slopes.
    """
    _check_group_sizes(data)
    design = build_fair_design(data, base_group, standardize=standardize)
    lam = _lambda_map(lambdas, data.group_ids)
    scale, pf = assemble_penalty_factors(design, lam)
    problem = PenalizedProblem(design.expanded, data.outcome, design.sample_weight, pf, 1, scale)
    beta, diag = solve(problem, settings=settings, warm_start=warm_start,
                       blocks=design.coordinate_blocks(),
                       row_group=dataset_codes(data, design.group_order))
    base, groups = split_coefficients(design, beta)
    return FairModel(base, groups, design.base_group, data.feature_names, design.scaling,
                     diag, lam, beta)


@dataclass(frozen=True)
class SeparateModels:
    """One independently fitted lasso per group."""

    blocks: Dict[str, CoefficientBlock]
    lambdas: Dict[str, float]
    diagnostics: Dict[str, FitDiagnostics]
    feature_names: Tuple[str, ...]
    scalings: Dict[str, Scaling] = field(default_factory=dict)

    kind = "separate"

    @property
    def group_ids(self) -> Tuple[str, ...]:
        return tuple(self.blocks)

    def predict(self, features, group_of, allow_unseen: bool = False) -> np.ndarray:
        # no shared block exists, so unseen groups are an error even with the fallback flag
        X = _check_features(features, len(self.feature_names))
        g = np.asarray(group_of).astype(str).ravel()
        unseen = sorted(set(g.tolist()) - set(self.blocks))
        if unseen:
            raise ValueError(f"unseen group(s) {unseen}; separate models have no shared fallback")
        out = np.empty(X.shape[0])
        for k, blk in self.blocks.items():
            rows = g == k
            out[rows] = blk.intercept + X[rows] @ blk.weights
        return out


def fit_single_lasso(features, outcome, lam: float, settings=None, standardize: bool = True,
                     warm_start=None):
    """Lasso with an unpenalized intercept and uniform weights ``1/n``.

    Returns (block in raw units, diagnostics, scaling, solver coefficients).
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(outcome, dtype=float)
    n, m = X.shape
    w = np.full(n, 1.0 / n)
    scaling = Scaling.fit(X, w) if standardize else Scaling.identity(m)
    Z = np.column_stack([np.ones(n), scaling.apply(X)])
    pf = np.ones(m + 1)
    pf[0] = 0.0
    beta, diag = solve(PenalizedProblem(Z, y, w, pf, 1, lam), settings=settings,
                       warm_start=warm_start)
    c0, b = scaling.to_original(beta[0], beta[1:])
    return CoefficientBlock(c0, b), diag, scaling, beta


def fit_separate(
    data: GroupedDataset,
    lambda_per_group: Union[float, Mapping[str, float]],
    settings: Optional[SolverSettings] = None,
    standardize: bool = True,
) -> SeparateModels:
    _check_group_sizes(data)
    lam = _lambda_map(lambda_per_group, data.group_ids)
    missing = [g for g in data.group_ids if g not in lam]
    if missing:
        raise ValueError(f"no penalty given for group(s) {missing}")
    blocks, diags, scalings = {}, {}, {}
    for g in data.group_ids:
        rows = data.mask(g)
        blk, diag, sc, _ = fit_single_lasso(data.features[rows], data.outcome[rows], lam[g],
                                            settings, standardize)
        blocks[g], diags[g], scalings[g] = blk, diag, sc
    return SeparateModels(blocks, lam, diags, data.feature_names, scalings)


@dataclass(frozen=True)
class IndicatorModel:
    """Pooled lasso with shared slopes and K-1 group dummies."""

    block: CoefficientBlock
    dummies: Dict[str, float]
    base_group: str
    lam: float
    diagnostics: FitDiagnostics
    feature_names: Tuple[str, ...]
    scaling: Scaling
    coef_: Optional[np.ndarray] = field(default=None, repr=False)

    kind = "indicator"

    @property
    def group_ids(self) -> Tuple[str, ...]:
        return (self.base_group,) + tuple(self.dummies)

    def predict(self, features, group_of, allow_unseen: bool = False) -> np.ndarray:
        X = _check_features(features, len(self.feature_names))
        g = np.asarray(group_of).astype(str).ravel()
        known = (g == self.base_group)
        out = self.block.intercept + X @ self.block.weights
        for k, d in self.dummies.items():
            rows = g == k
            known |= rows
            out[rows] += d
        if not allow_unseen and not np.all(known):
            raise ValueError(f"unseen group(s) {sorted(set(g[~known].tolist()))}")
        return out


def fit_indicator(
    data: GroupedDataset,
    lam: float,
    settings: Optional[SolverSettings] = None,
    base_group: str = AUTO,
    standardize: bool = True,
    warm_start=None,
) -> IndicatorModel:
    """Unweighted pooled lasso over [intercept | covariates | group dummies]."""
    design = build_indicator_design(data, base_group, standardize=standardize)
    problem = PenalizedProblem(design.expanded, data.outcome, design.sample_weight,
                               design.penalty_factor, 1, float(lam))
    beta, diag = solve(problem, settings=settings, warm_start=warm_start)
    m = data.m
    c0, b = design.scaling.to_original(beta[0], beta[1:1 + m])
    dummies = {g: float(beta[1 + m + k]) for k, g in enumerate(design.dummy_groups)}
    return IndicatorModel(CoefficientBlock(c0, b), dummies, design.base_group, float(lam), diag,
                          data.feature_names, design.scaling, beta)


def predict(model, features, group_of, allow_unseen: bool = False) -> np.ndarray:
    """Predict with any fitted model in this package."""
    return model.predict(features, group_of, allow_unseen=allow_unseen)
