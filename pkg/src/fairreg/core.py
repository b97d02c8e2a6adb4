"""Shared domain types and the evaluation metric."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def label_codes(labels, order: Sequence[str]) -> np.ndarray:
    """Position of each label in ``order``; -1 for labels not in it."""
    pos = {g: k for k, g in enumerate(order)}
    labels = np.asarray(labels).ravel()
    return np.fromiter((pos.get(str(v), -1) for v in labels.tolist()), dtype=np.int64,
                       count=labels.shape[0])


@dataclass(frozen=True)
class GroupedDataset:
    """Feature matrix, outcome and group label per sample.

    Group ids are strings ordered by first appearance in ``group_of``.
    Use :meth:`build` rather than the raw constructor.
    """

    features: np.ndarray
    outcome: np.ndarray
    group_of: np.ndarray
    group_ids: Tuple[str, ...]
    group_sizes: Tuple[int, ...]
    feature_names: Tuple[str, ...]
    group_index: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        # integer code of each row's group (position in group_ids)
        if self.group_index is None:
            object.__setattr__(self, "group_index", label_codes(self.group_of, self.group_ids))

    @classmethod
    def build(
        cls,
        features,
        outcome,
        group_of,
        feature_names: Optional[Sequence[str]] = None,
        group_ids: Optional[Sequence[str]] = None,
    ) -> "GroupedDataset":
        X = np.array(features, dtype=float)
        y = np.array(outcome, dtype=float).ravel()
        g = np.array([str(v) for v in np.asarray(group_of).ravel()], dtype=object)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(len(y), 0)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {X.shape}")
        n = X.shape[0]
        if y.shape[0] != n or g.shape[0] != n:
            raise ValueError(
                f"row count mismatch: features {n}, outcome {y.shape[0]}, groups {g.shape[0]}"
            )
        if not np.all(np.isfinite(X)):
            bad = np.argwhere(~np.isfinite(X))[0]
            raise ValueError(f"non-finite feature at row {bad[0]}, column {bad[1]}")
        if not np.all(np.isfinite(y)):
            raise ValueError(f"non-finite outcome at row {int(np.argmax(~np.isfinite(y)))}")
        seen = list(dict.fromkeys(g.tolist()))
        if group_ids is None:
            ids = tuple(seen)
        else:
            ids = tuple(str(v) for v in group_ids)
            extra = set(seen) - set(ids)
            if extra:
                raise ValueError(f"group labels not in group_ids: {sorted(extra)}")
            ids = tuple(v for v in ids if v in set(seen))
        if n == 0:
            raise ValueError("dataset has no rows")
        codes = label_codes(g, ids)
        sizes = tuple(int(c) for c in np.bincount(codes, minlength=len(ids)))
        if feature_names is None:
            feature_names = [f"x{j + 1}" for j in range(X.shape[1])]
        names = tuple(str(s) for s in feature_names)
        if len(names) != X.shape[1]:
            raise ValueError(f"{len(names)} feature names for {X.shape[1]} columns")
        return cls(_frozen(X), _frozen(y), _frozen(g), ids, sizes, names, _frozen(codes))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    @property
    def K(self) -> int:
        return len(self.group_ids)

    def size_of(self, group: str) -> int:
        return self.group_sizes[self.group_ids.index(group)]

    def mask(self, group: str) -> np.ndarray:
        if group not in self.group_ids:
            raise KeyError(f"unknown group {group!r}")
        return self.group_index == self.group_ids.index(group)

    def subset(self, rows) -> "GroupedDataset":
        """Dataset restricted to ``rows`` (index array or boolean mask).

        Groups keep their original relative order; groups left empty are dropped.
        """
        rows = np.asarray(rows)
        return GroupedDataset.build(
            self.features[rows],
            self.outcome[rows],
            self.group_of[rows],
            self.feature_names,
            group_ids=self.group_ids,
        )

    def only(self, group: str) -> "GroupedDataset":
        return self.subset(self.mask(group))


@dataclass(frozen=True)
class CoefficientBlock:
    intercept: float
    weights: np.ndarray
    penalized_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        w = _frozen(np.array(self.weights, dtype=float).ravel())
        object.__setattr__(self, "weights", w)
        mask = self.penalized_mask
        mask = np.ones(w.shape, dtype=bool) if mask is None else np.array(mask, dtype=bool)
        if mask.shape != w.shape:
            raise ValueError("penalized_mask must match weights")
        object.__setattr__(self, "penalized_mask", _frozen(mask))


@dataclass(frozen=True)
class FitDiagnostics:
    iterations: int
    final_objective: float
    converged: bool
    max_kkt_violation: float
    objective_trace: Optional[Tuple[float, ...]] = None


def mse(predicted, actual) -> float:
    """Mean squared error between two equal-length finite vectors."""
    p = np.asarray(predicted, dtype=float).ravel()
    a = np.asarray(actual, dtype=float).ravel()
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} vs {a.shape[0]}")
    if p.size == 0:
        raise ValueError("mse of empty vectors")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(a))):
        raise ValueError("mse inputs must be finite")
    return float(np.mean((p - a) ** 2))


def group_mse(predictions, data: GroupedDataset) -> Dict[str, float]:
    """Per-group MSE of ``predictions`` against ``data.outcome``."""
    p = np.asarray(predictions, dtype=float).ravel()
    if p.shape[0] != data.n:
        raise ValueError(f"length mismatch: {p.shape[0]} predictions for {data.n} samples")
    return {g: mse(p[data.mask(g)], data.outcome[data.mask(g)]) for g in data.group_ids}
