"""Expanded design matrices for FAIR and the group-indicator baseline.

FAIR column layout (P = 1 + m + (K-1)(1+m))::

    [base intercept | m base covariates | for each non-base group: offset, m interactions]

Interaction columns repeat the (scaled) covariate on that group's rows and are
zero elsewhere, so a group-k sample is predicted by
``intercept + offset_k + x . (beta_base + beta_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .core import CoefficientBlock, GroupedDataset, label_codes

AUTO = "auto"


@dataclass(frozen=True)
class Scaling:
    """Per-covariate centering/scaling applied before expansion."""

    centers: np.ndarray
    scales: np.ndarray

    @classmethod
    def identity(cls, m: int) -> "Scaling":
        return cls(np.zeros(m), np.ones(m))

    @classmethod
    def fit(cls, features: np.ndarray, weights: np.ndarray) -> "Scaling":
        """Weighted mean and standard deviation; constant columns keep scale 1."""
        wn = weights / weights.sum()
        centers = wn @ features
        sd = np.sqrt(wn @ (features - centers) ** 2)
        scales = np.where(sd > 1e-12 * np.maximum(np.abs(centers), 1.0), sd, 1.0)
        return cls(centers, scales)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.centers) / self.scales

    def to_original(self, intercept: float, weights: np.ndarray) -> Tuple[float, np.ndarray]:
        """Convert a (intercept, slopes) pair fitted on scaled covariates to raw units."""
        raw = weights / self.scales
        return float(intercept - raw @ self.centers), raw

    def to_scaled(self, intercept: float, weights: np.ndarray) -> Tuple[float, np.ndarray]:
        return float(intercept + weights @ self.centers), weights * self.scales


def choose_base_group(data: GroupedDataset, base_group: str = AUTO) -> str:
    """Largest group (first in ``group_ids`` order on ties) unless given explicitly."""
    if base_group == AUTO:
        return data.group_ids[int(np.argmax(data.group_sizes))]
    if base_group not in data.group_ids:
        raise ValueError(f"unknown base group {base_group!r}; groups are {list(data.group_ids)}")
    return base_group


def inverse_size_weights(data: GroupedDataset) -> np.ndarray:
    return 1.0 / np.asarray(data.group_sizes, dtype=float)[data.group_index]


@dataclass(frozen=True)
class FairDesign:
    expanded: np.ndarray
    column_map: Tuple[Tuple[str, str, str], ...]
    penalty_factor: np.ndarray
    sample_weight: np.ndarray
    base_group: str
    group_order: Tuple[str, ...]
    feature_names: Tuple[str, ...]
    scaling: Scaling

    @property
    def m(self) -> int:
        return len(self.feature_names)

    @property
    def n_columns(self) -> int:
        return self.expanded.shape[1]

    def block_slice(self, group: str) -> slice:
        """Columns of ``group``'s block (base: intercept + covariates)."""
        m = self.m
        if group == self.base_group:
            return slice(0, 1 + m)
        k = self.group_order.index(group)
        start = 1 + m + (k - 1) * (1 + m)
        return slice(start, start + 1 + m)

    def coordinate_blocks(self):
        """Solver blocks pairing each base column with the same column in every group block."""
        m, K = self.m, len(self.group_order)
        return [[j] + [1 + m + (k - 1) * (1 + m) + j for k in range(1, K)] for j in range(1 + m)]

    def row_groups(self, group_of) -> np.ndarray:
        """Position of each row's group in ``group_order`` (0 for the base group)."""
        return _checked_codes(group_of, self.group_order)

    def transform(self, features, group_of) -> np.ndarray:
        """Expanded matrix for new samples, reusing this design's scaling and layout."""
        return _expand(self.scaling.apply(features), _checked_codes(group_of, self.group_order),
                       len(self.group_order))


def _checked_codes(group_of, order) -> np.ndarray:
    """Position of each label in ``order``; unseen labels are an error."""
    codes = label_codes(group_of, order)
    if np.any(codes < 0):
        g = np.asarray(group_of).ravel().astype(str)
        raise ValueError(f"unseen group(s) {sorted(set(g[codes < 0].tolist()))}")
    return codes


def dataset_codes(data: GroupedDataset, order) -> np.ndarray:
    """Position in ``order`` of each row's group (-1 for groups not in ``order``)."""
    lut = np.array([order.index(g) if g in order else -1 for g in data.group_ids], dtype=np.int64)
    return lut[data.group_index]


def _expand(Z: np.ndarray, codes: np.ndarray, K: int) -> np.ndarray:
    n, m = Z.shape
    out = np.zeros((n, 1 + m + (K - 1) * (1 + m)), order="F")
    out[:, 0] = 1.0
    out[:, 1:1 + m] = Z
    for k in range(1, K):
        rows = codes == k
        start = 1 + m + (k - 1) * (1 + m)
        out[rows, start] = 1.0
        out[rows, start + 1:start + 1 + m] = Z[rows]
    return out


def build_fair_design(
    data: GroupedDataset,
    base_group: str = AUTO,
    standardize: bool = False,
    group_factors: Optional[Mapping[str, float]] = None,
) -> FairDesign:
    """Interaction design with inverse-group-size weights.

    Parameters
    ----------
    data : GroupedDataset
    base_group : str
        Group whose block carries the shared coefficients; ``"auto"`` picks the largest.
    standardize : bool
        Center and scale covariates to unit weighted standard deviation over the
        whole dataset (weights ``1/n_k``) before expansion.
    group_factors : mapping, optional
        Penalty factor per group block; defaults to 1 for every group.
    """
    base = choose_base_group(data, base_group)
    order = (base,) + tuple(g for g in data.group_ids if g != base)
    w = inverse_size_weights(data)
    scaling = Scaling.fit(data.features, w) if standardize else Scaling.identity(data.m)
    X = _expand(scaling.apply(data.features), dataset_codes(data, order), len(order))

    names = data.feature_names
    cmap: List[Tuple[str, str, str]] = [(base, "(intercept)", "base-intercept")]
    cmap += [(base, nm, "base") for nm in names]
    for g in order[1:]:
        cmap.append((g, "(intercept)", "group-intercept"))
        cmap += [(g, nm, "interaction") for nm in names]

    design = FairDesign(X, tuple(cmap), np.zeros(X.shape[1]), w, base, order, names, scaling)
    factors = {g: 1.0 for g in order} if group_factors is None else group_factors
    _, pf = assemble_penalty_factors(design, factors)
    object.__setattr__(design, "penalty_factor", pf)
    return design


def assemble_penalty_factors(design: FairDesign, lambda_per_group: Mapping[str, float]) -> Tuple[float, np.ndarray]:
    """Encode per-group penalties as solver penalty factors with global scale 1."""
    missing = [g for g in design.group_order if g not in lambda_per_group]
    if missing:
        raise ValueError(f"no penalty given for group(s) {missing}")
    pf = np.zeros(design.n_columns)
    for g in design.group_order:
        lam = float(lambda_per_group[g])
        if not (np.isfinite(lam) and lam >= 0):
            raise ValueError(f"penalty for group {g!r} must be finite and >= 0, got {lam}")
        sl = design.block_slice(g)
        pf[sl] = lam
    pf[0] = 0.0
    return 1.0, pf


def split_coefficients(design: FairDesign, flat) -> Tuple[CoefficientBlock, Dict[str, CoefficientBlock]]:
    """Solver vector -> (base block, {group: offset/interaction block}) in raw covariate units."""
    flat = np.asarray(flat, dtype=float).ravel()
    if flat.shape[0] != design.n_columns:
        raise ValueError(f"coefficient vector has length {flat.shape[0]}, expected {design.n_columns}")
    sc = design.scaling
    sl = design.block_slice(design.base_group)
    c0, b = sc.to_original(flat[sl][0], flat[sl][1:])
    mask = np.ones(design.m, dtype=bool)
    base = CoefficientBlock(c0, b, mask)
    groups = {}
    for g in design.group_order[1:]:
        v = flat[design.block_slice(g)]
        d0, d = sc.to_original(v[0], v[1:])
        groups[g] = CoefficientBlock(d0, d, mask)
    return base, groups


def flatten_coefficients(design: FairDesign, base: CoefficientBlock,
                         groups: Mapping[str, CoefficientBlock]) -> np.ndarray:
    """Inverse of :func:`split_coefficients`."""
    sc = design.scaling
    out = np.zeros(design.n_columns)
    c0, b = sc.to_scaled(base.intercept, base.weights)
    out[design.block_slice(design.base_group)] = np.concatenate([[c0], b])
    for g in design.group_order[1:]:
        d0, d = sc.to_scaled(groups[g].intercept, groups[g].weights)
        out[design.block_slice(g)] = np.concatenate([[d0], d])
    return out


@dataclass(frozen=True)
class IndicatorDesign:
    expanded: np.ndarray
    penalty_factor: np.ndarray
    sample_weight: np.ndarray
    base_group: str
    dummy_groups: Tuple[str, ...]
    feature_names: Tuple[str, ...]
    scaling: Scaling

    def transform(self, features, group_of, allow_unseen: bool = False) -> np.ndarray:
        g = np.asarray(group_of).astype(str)
        known = set(self.dummy_groups) | {self.base_group}
        unseen = sorted(set(g.tolist()) - known)
        if unseen and not allow_unseen:
            raise ValueError(f"unseen group(s) {unseen}")
        return _indicator_matrix(self.scaling.apply(features), label_codes(g, self.dummy_groups),
                                 len(self.dummy_groups))


def _indicator_matrix(Z, codes, n_dummies: int) -> np.ndarray:
    """Rows with code ``k >= 0`` get a one in dummy column ``k``."""
    n, m = Z.shape
    out = np.zeros((n, 1 + m + n_dummies), order="F")
    out[:, 0] = 1.0
    out[:, 1:1 + m] = Z
    for k in range(n_dummies):
        out[:, 1 + m + k] = codes == k
    return out


def build_indicator_design(data: GroupedDataset, base_group: str = AUTO,
                           standardize: bool = False) -> IndicatorDesign:
    """Pooled design: intercept, covariates, and K-1 one-hot group dummies."""
    base = choose_base_group(data, base_group)
    dummies = tuple(g for g in data.group_ids if g != base)
    w = np.ones(data.n)
    scaling = Scaling.fit(data.features, w) if standardize else Scaling.identity(data.m)
    X = _indicator_matrix(scaling.apply(data.features), dataset_codes(data, dummies), len(dummies))
    pf = np.ones(X.shape[1])
    pf[0] = 0.0
    return IndicatorDesign(X, pf, w, base, dummies, data.feature_names, scaling)
