"""Weighted penalized least squares by cyclic coordinate descent.

The objective minimized by :func:`solve` is::

    sum_i w_i (y_i - x_i . b)^2  +  b'Qb + c'b  +  lam * sum_j p_j |b_j|

with the ridge variant replacing ``|b_j|`` by ``b_j**2``. ``Q`` and ``c`` come
from an optional :class:`SmoothQuadraticTerm`; every per-group penalty is
expressed through the ``penalty_factor`` vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import chain
from typing import Optional, Sequence, Tuple

import numpy as np

from . import _cd
from .core import FitDiagnostics

_EMPTY_Q = np.zeros((0, 0))
_EMPTY_C = np.zeros(0)


@dataclass(frozen=True)
class PenalizedProblem:
    design: np.ndarray
    response: np.ndarray
    sample_weight: np.ndarray
    penalty_factor: np.ndarray
    penalty_order: int = 1
    lam: float = 1.0

    def __post_init__(self):
        X = np.asarray(self.design, dtype=float)
        if X.ndim != 2:
            raise ValueError("design must be a 2-d matrix")
        n, p = X.shape
        y = np.asarray(self.response, dtype=float).ravel()
        w = np.asarray(self.sample_weight, dtype=float).ravel()
        pf = np.asarray(self.penalty_factor, dtype=float).ravel()
        if y.shape[0] != n or w.shape[0] != n:
            raise ValueError("response and sample_weight must have one entry per design row")
        if pf.shape[0] != p:
            raise ValueError(f"penalty_factor has {pf.shape[0]} entries for {p} columns")
        if not (np.all(np.isfinite(w)) and np.all(w > 0)):
            raise ValueError("sample weights must be finite and strictly positive")
        if not (np.all(np.isfinite(pf)) and np.all(pf >= 0)):
            raise ValueError("penalty factors must be finite and >= 0")
        if self.penalty_order not in (1, 2):
            raise ValueError("penalty_order must be 1 (lasso) or 2 (ridge)")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lam must be finite and >= 0")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("design and response must be finite")
        for name, arr in (("design", X), ("response", y), ("sample_weight", w),
                          ("penalty_factor", pf)):
            arr = np.array(arr, dtype=float, order="F" if arr.ndim == 2 else "C")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def with_lambda(self, lam: float) -> "PenalizedProblem":
        return PenalizedProblem(self.design, self.response, self.sample_weight,
                                self.penalty_factor, self.penalty_order, lam)


@dataclass(frozen=True)
class SmoothQuadraticTerm:
    """Extra smooth term ``b'Qb + c'b`` added to the least-squares loss."""

    matrix: np.ndarray
    linear: Optional[np.ndarray] = None

    def __post_init__(self):
        Q = np.array(self.matrix, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError("quadratic term must be a square matrix")
        if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-10:
            raise ValueError("quadratic term must be symmetric")
        c = np.zeros(Q.shape[0]) if self.linear is None else np.array(self.linear, dtype=float)
        if c.shape != (Q.shape[0],):
            raise ValueError("linear term length must match the matrix")
        object.__setattr__(self, "matrix", Q)
        object.__setattr__(self, "linear", c)


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-7
    max_sweeps: int = 100_000
    use_active_set: bool = True
    debug: bool = False

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")


def soft_threshold(z: float, gamma: float) -> float:
    """``sign(z) * max(|z| - gamma, 0)``."""
    if gamma < 0:
        raise ValueError("threshold must be >= 0")
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


def _weighted_variance(X, w):
    wn = w / w.sum()
    mean = wn @ X
    return wn @ (X - mean) ** 2, wn @ X**2


def pinned_columns(problem: PenalizedProblem) -> np.ndarray:
    """Columns whose coefficient is fixed at zero (degenerate or all-zero columns).

    Raises
    ------
    ValueError
        If more than one unpenalized column is constant (rank deficient).
    """
    if problem.p == 0:
        return np.zeros(0, dtype=bool)
    var, sq = _weighted_variance(problem.design, problem.sample_weight)
    const = var <= 1e-14 * np.maximum(sq, 1e-300)
    zero = sq == 0.0
    free = problem.penalty_factor == 0
    if np.sum(const & free & ~zero) > 1:
        raise ValueError("rank-deficient design: more than one constant unpenalized column")
    return zero | (const & ~free)


def objective(problem: PenalizedProblem, beta, smooth_extra: Optional[SmoothQuadraticTerm] = None) -> float:
    beta = np.asarray(beta, dtype=float)
    r = problem.response - problem.design @ beta
    f = float(problem.sample_weight @ r**2)
    pen = problem.lam * problem.penalty_factor
    if problem.penalty_order == 1:
        f += float(pen @ np.abs(beta))
    else:
        f += float(pen @ beta**2)
    if smooth_extra is not None:
        f += float(beta @ smooth_extra.matrix @ beta + smooth_extra.linear @ beta)
    return f


def kkt_violation(problem: PenalizedProblem, beta,
                  smooth_extra: Optional[SmoothQuadraticTerm] = None, pinned=None) -> float:
    """Largest KKT violation, in coefficient units (divided by coordinate curvature)."""
    if problem.p == 0:
        return 0.0
    beta = np.asarray(beta, dtype=float)
    X, w = problem.design, problem.sample_weight
    r = problem.response - X @ beta
    grad = -2.0 * (X.T @ (w * r))
    curv = 2.0 * (w @ X**2)
    if smooth_extra is not None:
        grad += 2.0 * smooth_extra.matrix @ beta + smooth_extra.linear
        curv += 2.0 * np.diag(smooth_extra.matrix)
    pen = problem.lam * problem.penalty_factor
    if problem.penalty_order == 1:
        viol = np.where(
            beta == 0.0,
            np.maximum(np.abs(grad) - pen, 0.0),
            np.abs(grad + pen * np.sign(beta)),
        )
    else:
        viol = np.abs(grad + 2.0 * pen * beta)
    pinned = pinned_columns(problem) if pinned is None else pinned
    keep = ~pinned & (curv > 0)
    if not np.any(keep):
        return 0.0
    return float(np.max(viol[keep] / curv[keep]))


def _unpenalized_fit(problem: PenalizedProblem, pinned) -> np.ndarray:
    free = (problem.penalty_factor == 0) & ~pinned
    beta = np.zeros(problem.p)
    if np.any(free):
        sw = np.sqrt(problem.sample_weight)
        A = problem.design[:, free] * sw[:, None]
        beta[free] = np.linalg.lstsq(A, problem.response * sw, rcond=None)[0]
    return beta


def lambda_max(problem: PenalizedProblem) -> float:
    """Smallest ``lam`` at which every penalized coefficient is zero (lasso)."""
    pinned = pinned_columns(problem)
    pf = problem.penalty_factor
    pen = (pf > 0) & ~pinned
    if not np.any(pf > 0):
        raise ValueError("lambda_max needs at least one penalized column")
    if problem.penalty_order != 1:
        raise ValueError("lambda_max is only defined for the lasso penalty")
    if not np.any(pen):
        return 0.0
    beta = _unpenalized_fit(problem, pinned)
    r = problem.response - problem.design @ beta
    grad = 2.0 * np.abs(problem.design[:, pen].T @ (problem.sample_weight * r))
    return float(np.max(grad / pf[pen]))


def _blocks_csr(p: int, blocks: Optional[Sequence[Sequence[int]]]):
    if blocks is None:
        return (np.arange(p + 1, dtype=np.int64), np.arange(p, dtype=np.int64))
    sizes = [len(b) for b in blocks]
    idx = np.fromiter(chain.from_iterable(blocks), dtype=np.int64, count=sum(sizes))
    if (idx.size != p or (p and (idx.min() < 0 or idx.max() >= p))
            or np.any(np.bincount(idx, minlength=p) != 1)):
        raise ValueError("blocks must partition the coefficient indices")
    ptr = np.zeros(len(blocks) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum(sizes)
    return ptr, idx


def _group_rows(problem: PenalizedProblem, row_group, disabled: bool):
    """Row order and group starts for the shared-block update.

    The kernel wants the rows of each group contiguous, so unless they already
    are, rows get sorted by group. Returns ``(None, [0, n], False)`` when the
    shared update cannot apply.
    """
    none = (None, np.array([0, problem.n], dtype=np.int64), False)
    if row_group is None or disabled:
        return none
    rg = np.asarray(row_group, dtype=np.int64).ravel()
    if rg.shape[0] != problem.n or (rg.size and rg.min() < 0):
        raise ValueError("row_group must hold one non-negative group index per row")
    K = int(rg.max()) + 1 if rg.size else 1
    if K < 2:
        return none
    order = None
    if np.any(rg[1:] < rg[:-1]):
        order = np.argsort(rg, kind="stable")
        rg = rg[order]
    return order, np.searchsorted(rg, np.arange(K + 1)).astype(np.int64), True


def solve(
    problem: PenalizedProblem,
    smooth_extra: Optional[SmoothQuadraticTerm] = None,
    settings: Optional[SolverSettings] = None,
    warm_start=None,
    blocks: Optional[Sequence[Sequence[int]]] = None,
    row_group: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, FitDiagnostics]:
    """Minimize the penalized objective; see the module docstring.

    Parameters
    ----------
    problem : PenalizedProblem
    smooth_extra : SmoothQuadraticTerm, optional
        Added to the smooth part of the objective.
    settings : SolverSettings, optional
    warm_start : array-like, optional
        Starting coefficients of length ``p``.
    blocks : list of index lists, optional
        Partition of the coefficients into jointly updated blocks. Coupled
        coordinates (for instance fused coefficients) converge far faster when
        they share a block. Defaults to one block per coordinate.
    row_group : int array of shape (n,), optional
        Group index of each row. A block ``[j0, j1, ..., j_{K-1}]`` whose member
        ``k`` equals column ``j0`` restricted to rows of group ``k`` is then
        minimized exactly with a specialised update (lasso without ``Q`` only).

    Returns
    -------
    beta : ndarray of shape (p,)
    diagnostics : FitDiagnostics
        ``converged`` is False when ``max_sweeps`` ran out; no exception is raised.
    """
    settings = settings or SolverSettings()
    p = problem.p
    pinned = pinned_columns(problem)
    if p == 0:
        f = objective(problem, np.zeros(0), smooth_extra)
        return np.zeros(0), FitDiagnostics(0, f, True, 0.0, (f,) if settings.debug else None)
    if warm_start is None:
        beta = np.zeros(p)
    else:
        beta = np.array(warm_start, dtype=float).ravel()
        if beta.shape[0] != p:
            raise ValueError(f"warm_start has length {beta.shape[0]}, expected {p}")
    beta[pinned] = 0.0

    if smooth_extra is not None:
        if smooth_extra.matrix.shape != (p, p):
            raise ValueError("quadratic term shape does not match the design")
        Q, c, has_q = np.ascontiguousarray(smooth_extra.matrix), smooth_extra.linear, True
    else:
        Q, c, has_q = _EMPTY_Q, _EMPTY_C, False

    ptr, idx = _blocks_csr(p, blocks)
    order, gstart, grouped = _group_rows(problem, row_group, has_q or problem.penalty_order == 2)
    X, y, w = problem.design, problem.response, problem.sample_weight
    if order is not None:
        X, y, w = np.asfortranarray(X[order]), y[order], w[order]
    pen = problem.lam * problem.penalty_factor
    ridge = problem.penalty_order == 2
    trace = np.zeros(settings.max_sweeps if settings.debug else 0)
    total = 0
    converged = False
    kkt = np.inf
    tol = settings.tolerance
    while total < settings.max_sweeps:
        sweeps, last = _cd.cd_loop(
            X, y, w, pen, Q, c, has_q, ridge, pinned, ptr, idx,
            beta, tol, settings.max_sweeps - total,
            settings.use_active_set, trace[total:], gstart, grouped,
        )
        total += sweeps
        kkt = kkt_violation(problem, beta, smooth_extra, pinned)
        if last < settings.tolerance and kkt <= settings.tolerance:
            converged = True
            break
        if last >= tol:
            break
        # coefficient steps are small but the certificate is not yet met
        tol = max(tol / 10.0, 1e-15)
    f = objective(problem, beta, smooth_extra)
    diag = FitDiagnostics(
        iterations=total,
        final_objective=f,
        converged=converged,
        max_kkt_violation=kkt,
        objective_trace=tuple(trace[:total].tolist()) if settings.debug else None,
    )
    return beta, diag
