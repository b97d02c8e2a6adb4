"""Joint lasso: per-group coefficients with an L2 penalty on pairwise differences.

Objective (on the scaled covariates)::

    sum_k (1/n_k) ||y_k - a_k - X_k b_k||^2 + lam ||b_k||_1
          + gamma * sum_{k<k'} tau[k,k'] ||b_k - b_k'||^2

Intercepts ``a_k`` are neither penalized nor fused. The fusion term enters the
coordinate-descent solver as an exact smooth quadratic; the K copies of each
covariate are updated together as one block so strong fusion does not stall
the sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import CoefficientBlock, FitDiagnostics, GroupedDataset
from .design import Scaling, _checked_codes, inverse_size_weights
from .solver import PenalizedProblem, SmoothQuadraticTerm, SolverSettings, solve


@dataclass(frozen=True)
class JointLassoSpec:
    lam: float
    gamma: float
    tau: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lam must be finite and >= 0")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError("gamma must be finite and >= 0")
        if self.tau is not None:
            t = np.array(self.tau, dtype=float)
            if t.ndim != 2 or t.shape[0] != t.shape[1]:
                raise ValueError("tau must be a square matrix")
            if np.max(np.abs(t - t.T), initial=0.0) > 1e-12:
                raise ValueError("tau must be symmetric")
            if np.any(np.diag(t) != 0) or np.any(t < 0):
                raise ValueError("tau must have a zero diagonal and non-negative entries")
            t.flags.writeable = False
            object.__setattr__(self, "tau", t)

    def tau_matrix(self, K: int) -> np.ndarray:
        if self.tau is None:
            return np.ones((K, K)) - np.eye(K)
        if self.tau.shape != (K, K):
            raise ValueError(f"tau is {self.tau.shape}, expected ({K}, {K})")
        return self.tau


@dataclass(frozen=True)
class JointDesign:
    """Block-diagonal stacked design: group k owns columns [a_k, b_k1..b_km]."""

    expanded: np.ndarray
    sample_weight: np.ndarray
    penalty_factor: np.ndarray
    group_order: Tuple[str, ...]
    scaling: Scaling
    m: int

    def transform(self, features, group_of) -> np.ndarray:
        return _stack(self.scaling.apply(features), _checked_codes(group_of, self.group_order),
                      len(self.group_order))

    def fusion_term(self, gamma: float, tau: np.ndarray) -> SmoothQuadraticTerm:
        K, m = len(self.group_order), self.m
        Q = np.zeros((K * (m + 1), K * (m + 1)))
        slopes = np.arange(1, m + 1)
        for k in range(K):
            for q in range(k + 1, K):
                c = gamma * tau[k, q]
                if c == 0:
                    continue
                ik = k * (m + 1) + slopes
                iq = q * (m + 1) + slopes
                Q[ik, ik] += c
                Q[iq, iq] += c
                Q[ik, iq] -= c
                Q[iq, ik] -= c
        return SmoothQuadraticTerm(Q)

    def blocks(self, fused: bool) -> List[List[int]]:
        K, m = len(self.group_order), self.m
        out = [[k * (m + 1)] for k in range(K)]
        if fused and K > 1:
            out += [[k * (m + 1) + j for k in range(K)] for j in range(1, m + 1)]
        else:
            out += [[k * (m + 1) + j] for k in range(K) for j in range(1, m + 1)]
        return out


def _stack(Z, codes, K: int) -> np.ndarray:
    n, m = Z.shape
    out = np.zeros((n, K * (m + 1)), order="F")
    for k in range(K):
        rows = codes == k
        out[rows, k * (m + 1)] = 1.0
        out[rows, k * (m + 1) + 1:(k + 1) * (m + 1)] = Z[rows]
    return out


def build_joint_design(data: GroupedDataset, standardize: bool = True) -> JointDesign:
    w = inverse_size_weights(data)
    scaling = Scaling.fit(data.features, w) if standardize else Scaling.identity(data.m)
    X = _stack(scaling.apply(data.features), data.group_index, data.K)
    m = data.m
    pf = np.ones(X.shape[1])
    pf[::m + 1] = 0.0
    return JointDesign(X, w, pf, data.group_ids, scaling, m)


def joint_problem(design: JointDesign, outcome, spec: JointLassoSpec):
    problem = PenalizedProblem(design.expanded, outcome, design.sample_weight,
                               design.penalty_factor, 1, spec.lam)
    K = len(design.group_order)
    fused = spec.gamma > 0 and K > 1
    extra = design.fusion_term(spec.gamma, spec.tau_matrix(K)) if fused else None
    return problem, extra, design.blocks(fused)


@dataclass(frozen=True)
class JointLassoModel:
    blocks: Dict[str, CoefficientBlock]
    spec: JointLassoSpec
    diagnostics: FitDiagnostics
    feature_names: Tuple[str, ...]
    scaling: Scaling
    coef_: Optional[np.ndarray] = None

    kind = "joint"

    @property
    def group_ids(self) -> Tuple[str, ...]:
        return tuple(self.blocks)

    def predict(self, features, group_of, allow_unseen: bool = False) -> np.ndarray:
        m = len(self.feature_names)
        X = np.asarray(features, dtype=float)
        if X.ndim != 2 or X.shape[1] != m:
            raise ValueError(f"expected {m} covariates, got array of shape {X.shape}")
        g = np.asarray(group_of).astype(str).ravel()
        unseen = sorted(set(g.tolist()) - set(self.blocks))
        if unseen:
            raise ValueError(f"unseen group(s) {unseen}")
        out = np.empty(X.shape[0])
        for k, blk in self.blocks.items():
            rows = g == k
            out[rows] = blk.intercept + X[rows] @ blk.weights
        return out


def unstack(design: JointDesign, beta) -> Dict[str, CoefficientBlock]:
    m = design.m
    out = {}
    for k, g in enumerate(design.group_order):
        v = beta[k * (m + 1):(k + 1) * (m + 1)]
        c0, b = design.scaling.to_original(v[0], v[1:])
        out[g] = CoefficientBlock(c0, b)
    return out


def fit_joint(
    data: GroupedDataset,
    spec: JointLassoSpec,
    settings: Optional[SolverSettings] = None,
    standardize: bool = True,
    warm_start=None,
) -> JointLassoModel:
    for g, n_k in zip(data.group_ids, data.group_sizes):
        if n_k < 2:
            raise ValueError(f"group {g!r} has {n_k} sample(s); at least 2 are required")
    design = build_joint_design(data, standardize)
    problem, extra, blocks = joint_problem(design, data.outcome, spec)
    beta, diag = solve(problem, extra, settings, warm_start=warm_start, blocks=blocks)
    return JointLassoModel(unstack(design, beta), spec, diag, data.feature_names,
                           design.scaling, beta)
