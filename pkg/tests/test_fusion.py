import numpy as np
import pytest

from fairreg.core import GroupedDataset
from fairreg.fusion import JointLassoSpec, build_joint_design, fit_joint
from fairreg.solver import PenalizedProblem, SolverSettings, solve
from oracles import direct_objective, prox_grad

TIGHT = SolverSettings(tolerance=1e-11)


def grouped(seed, sizes=(40, 20), m=4):
    rng = np.random.default_rng(seed)
    labels = [f"g{i + 1}" for i in range(len(sizes))]
    g = np.repeat(labels, sizes)
    X = rng.normal(1.0, 1.3, size=(len(g), m))
    common = rng.normal(size=m)
    beta = {k: common + 0.5 * rng.normal(size=m) for k in labels}
    y = np.array([X[i] @ beta[g[i]] for i in range(len(g))]) + 0.5 * rng.normal(size=len(g))
    return GroupedDataset.build(X, y, g)


def test_gamma_zero_separates_into_weighted_lassos():
    data = grouped(0, sizes=(40, 20, 15))
    lam = 0.05
    model = fit_joint(data, JointLassoSpec(lam, 0.0), TIGHT, standardize=False)
    for g in data.group_ids:
        rows = data.mask(g)
        n_k = rows.sum()
        A = np.column_stack([np.ones(n_k), data.features[rows]])
        pen = np.r_[0.0, np.full(data.m, lam)]
        ref = prox_grad(A, data.outcome[rows], np.full(n_k, 1 / n_k), pen)
        assert model.blocks[g].intercept == pytest.approx(ref[0], abs=1e-6)
        np.testing.assert_allclose(model.blocks[g].weights, ref[1:], atol=1e-6)


def test_huge_gamma_ties_slopes_to_common_fit():
    data = grouped(1)
    lam = 0.03
    d = build_joint_design(data, standardize=False)
    scale = float(np.mean((d.sample_weight @ d.expanded**2)[d.penalty_factor > 0]))
    model = fit_joint(data, JointLassoSpec(lam, 1e8 * scale), TIGHT, standardize=False)
    b1, b2 = model.blocks["g1"].weights, model.blocks["g2"].weights
    assert np.max(np.abs(b1 - b2)) <= 1e-4
    # tied problem: per-group intercepts, one slope vector, penalty K * lam
    w = 1.0 / np.where(data.mask("g1"), data.size_of("g1"), data.size_of("g2"))
    A = np.column_stack([data.mask("g1"), data.mask("g2"), data.features]).astype(float)
    pen = np.r_[0.0, 0.0, np.full(data.m, 2 * lam)]
    ref = prox_grad(A, data.outcome, w, pen)
    np.testing.assert_allclose(b1, ref[2:], atol=1e-4)
    np.testing.assert_allclose(b2, ref[2:], atol=1e-4)
    assert model.blocks["g1"].intercept == pytest.approx(ref[0], abs=1e-4)


def test_only_gamma_tau_product_matters():
    data = grouped(2)
    a = fit_joint(data, JointLassoSpec(0.02, 0.4), TIGHT)
    tau = np.array([[0.0, 2.0], [2.0, 0.0]])
    b = fit_joint(data, JointLassoSpec(0.02, 0.2, tau), TIGHT)
    for g in data.group_ids:
        np.testing.assert_allclose(a.blocks[g].weights, b.blocks[g].weights, atol=1e-8)


def test_permuting_groups_permutes_solution():
    data = grouped(3, sizes=(30, 20, 12))
    tau = np.array([[0, 1.0, 0.5], [1.0, 0, 2.0], [0.5, 2.0, 0]])
    a = fit_joint(data, JointLassoSpec(0.02, 0.3, tau), TIGHT)
    order = np.r_[np.flatnonzero(data.mask("g3")), np.flatnonzero(data.mask("g1")),
                  np.flatnonzero(data.mask("g2"))]
    perm = GroupedDataset.build(data.features[order], data.outcome[order], data.group_of[order])
    assert perm.group_ids == ("g3", "g1", "g2")
    idx = [2, 0, 1]
    b = fit_joint(perm, JointLassoSpec(0.02, 0.3, tau[np.ix_(idx, idx)]), TIGHT)
    for g in data.group_ids:
        np.testing.assert_allclose(a.blocks[g].weights, b.blocks[g].weights, atol=1e-7)
        assert a.blocks[g].intercept == pytest.approx(b.blocks[g].intercept, abs=1e-7)


def test_objective_audit_and_monotone_trace():
    data = grouped(4, sizes=(25, 15, 10))
    spec = JointLassoSpec(0.05, 0.7)
    model = fit_joint(data, spec, SolverSettings(tolerance=1e-10, debug=True))
    d = build_joint_design(data)
    beta = model.coef_
    K, m = 3, data.m
    slopes = [beta[k * (m + 1) + 1:(k + 1) * (m + 1)] for k in range(K)]
    fusion = sum(0.7 * np.sum((slopes[k] - slopes[q]) ** 2)
                 for k in range(K) for q in range(k + 1, K))
    f = direct_objective(d.expanded, data.outcome, d.sample_weight, 0.05 * d.penalty_factor, beta)
    assert model.diagnostics.final_objective == pytest.approx(f + fusion, rel=1e-8)
    trace = np.array(model.diagnostics.objective_trace)
    assert np.all(np.diff(trace) <= 1e-12 * np.abs(trace[:-1]))
    np.testing.assert_allclose(model.predict(data.features, data.group_of), d.expanded @ beta,
                               atol=1e-12)


def test_matches_oracle_with_fusion():
    data = grouped(5, sizes=(20, 12))
    spec = JointLassoSpec(0.04, 0.5)
    d = build_joint_design(data)
    model = fit_joint(data, spec, TIGHT)
    Q = d.fusion_term(0.5, spec.tau_matrix(2)).matrix
    ref = prox_grad(d.expanded, data.outcome, d.sample_weight, 0.04 * d.penalty_factor, Q)
    np.testing.assert_allclose(model.coef_, ref, atol=1e-6)


def test_spec_validation_and_unseen():
    with pytest.raises(ValueError):
        JointLassoSpec(-1.0, 0.0)
    with pytest.raises(ValueError):
        JointLassoSpec(1.0, -1.0)
    with pytest.raises(ValueError):
        JointLassoSpec(1.0, 1.0, np.array([[0, 1.0], [2.0, 0]]))
    with pytest.raises(ValueError):
        JointLassoSpec(1.0, 1.0, np.eye(2))
    with pytest.raises(ValueError):
        JointLassoSpec(1.0, 1.0, np.zeros((2, 2))).tau_matrix(3)
    data = grouped(6)
    model = fit_joint(data, JointLassoSpec(0.1, 0.1))
    with pytest.raises(ValueError, match="unseen"):
        model.predict(data.features[:1], ["g7"])
