import numpy as np
import pytest
from hypothesis import given, strategies as st

from fairreg.solver import (
    PenalizedProblem,
    SmoothQuadraticTerm,
    SolverSettings,
    kkt_violation,
    lambda_max,
    objective,
    soft_threshold,
    solve,
)
from oracles import direct_objective, kkt_oracle, normal_equations, prox_grad

TIGHT = SolverSettings(tolerance=1e-10)


def random_problem(seed, n_max=40, p_max=8, lam_kind=None):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(1, p_max + 1))
    n = int(rng.integers(p + 5, max(p + 6, n_max + 1)))
    X = rng.normal(size=(n, p)) * rng.uniform(0.5, 2.0, size=p)
    y = X @ (rng.normal(size=p) * (rng.random(p) < 0.6)) + rng.normal(size=n)
    w = rng.uniform(0.2, 2.0, size=n)
    pf = rng.choice([0.0, 0.5, 1.0, 2.0], size=p, p=[0.15, 0.25, 0.4, 0.2])
    if not np.any(pf > 0):
        pf[0] = 1.0
    prob = PenalizedProblem(X, y, w, pf, lam=0.0)
    kind = lam_kind or ["zero", "small", "near"][seed % 3]
    lmax = lambda_max(prob)
    lam = {"zero": 0.0, "small": 0.01 * lmax, "near": 0.9 * lmax}[kind]
    return prob.with_lambda(lam)


def test_soft_threshold_examples():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    for z in (-2.5, 0.0, 1e-9, 7.0):
        assert soft_threshold(z, 0.0) == z
    with pytest.raises(ValueError):
        soft_threshold(1.0, -1.0)


def test_exact_interpolation():
    prob = PenalizedProblem(np.array([[1.0], [2.0]]), [2.0, 4.0], [1.0, 1.0], [1.0], lam=0.0)
    beta, diag = solve(prob)
    assert beta[0] == pytest.approx(2.0, abs=1e-9)
    assert diag.converged


def test_lambda_max_single_column():
    # unit-norm x, y = x: f(b) = (1 - b)^2 + lam |b| is zero at b = 0 once lam >= 2 |x'y| = 2
    x = np.array([0.6, 0.8])
    prob = PenalizedProblem(x[:, None], x, [1.0, 1.0], [1.0])
    assert lambda_max(prob) == pytest.approx(2.0, abs=1e-15)
    beta, _ = solve(prob.with_lambda(2.0))
    assert beta[0] == 0.0
    beta, _ = solve(prob.with_lambda(1.9))
    assert beta[0] > 0


def _oracle_lambda_max(prob):
    X, y, w, pf = prob.design, prob.response, prob.sample_weight, prob.penalty_factor
    free = pf == 0
    r = y.copy()
    if np.any(free):
        r = y - X[:, free] @ normal_equations(X[:, free], y, w)
    pen = pf > 0
    return np.max(2 * np.abs(X[:, pen].T @ (w * r)) / pf[pen])


@pytest.mark.parametrize("seed", range(10))
def test_lambda_max_matches_formula_and_zeroes_solution(seed):
    prob = random_problem(seed)
    lmax = lambda_max(prob)
    assert lmax == pytest.approx(_oracle_lambda_max(prob), rel=1e-9)
    beta, _ = solve(prob.with_lambda(lmax * (1 + 1e-9)), settings=TIGHT)
    assert np.all(beta[prob.penalty_factor > 0] == 0)


def test_lambda_max_homogeneous_and_factor_scaling():
    prob = random_problem(4, lam_kind="zero")
    scaled = PenalizedProblem(prob.design, 3.0 * prob.response, prob.sample_weight,
                              prob.penalty_factor)
    assert lambda_max(scaled) == pytest.approx(3.0 * lambda_max(prob), rel=1e-12)
    pf = prob.penalty_factor.copy()
    j = int(np.argmax(pf))
    pf[j] *= 2
    doubled = PenalizedProblem(prob.design, prob.response, prob.sample_weight, pf)
    assert lambda_max(doubled) == pytest.approx(_oracle_lambda_max(doubled), rel=1e-9)
    assert lambda_max(doubled) <= lambda_max(prob) + 1e-12


def test_lambda_max_errors():
    with pytest.raises(ValueError):
        lambda_max(PenalizedProblem(np.ones((3, 1)), [1, 2, 3], np.ones(3), [0.0]))
    with pytest.raises(ValueError):
        lambda_max(PenalizedProblem(np.eye(3), [1, 2, 3], np.ones(3), np.ones(3), penalty_order=2))


@pytest.mark.parametrize("seed", range(50))
def test_matches_proximal_gradient_oracle(seed):
    prob = random_problem(seed)
    beta, diag = solve(prob, settings=TIGHT)
    ref = prox_grad(prob.design, prob.response, prob.sample_weight, prob.lam * prob.penalty_factor)
    np.testing.assert_allclose(beta, ref, atol=1e-5, rtol=0)
    assert diag.converged
    assert diag.max_kkt_violation <= 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_with_quadratic_term_matches_oracle(seed):
    prob = random_problem(100 + seed)
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(prob.p, prob.p))
    Q = 0.5 * A @ A.T
    c = rng.normal(size=prob.p)
    beta, diag = solve(prob, SmoothQuadraticTerm(Q, c), TIGHT)
    ref = prox_grad(prob.design, prob.response, prob.sample_weight,
                    prob.lam * prob.penalty_factor, Q, c)
    np.testing.assert_allclose(beta, ref, atol=1e-5, rtol=0)
    # block updates reach the same fixed point
    beta_b, _ = solve(prob, SmoothQuadraticTerm(Q, c), TIGHT, blocks=[list(range(prob.p))])
    np.testing.assert_allclose(beta_b, ref, atol=1e-5, rtol=0)


@pytest.mark.parametrize("seed", range(8))
def test_ridge_closed_form(seed):
    prob = random_problem(seed, lam_kind="zero")
    pf = np.maximum(prob.penalty_factor, 0.1)
    ridge = PenalizedProblem(prob.design, prob.response, prob.sample_weight, pf, 2, 0.7)
    X, y, w = prob.design, prob.response, prob.sample_weight
    ref = np.linalg.solve(X.T @ (w[:, None] * X) + np.diag(0.7 * pf), X.T @ (w * y))
    beta, diag = solve(ridge, settings=TIGHT)
    np.testing.assert_allclose(beta, ref, atol=1e-7)
    assert diag.final_objective == pytest.approx(
        direct_objective(X, y, w, 0.7 * pf, beta, ridge=True), rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_kkt_certificate_matches_recomputation(seed):
    prob = random_problem(seed)
    beta, diag = solve(prob)
    assert diag.max_kkt_violation == pytest.approx(kkt_violation(prob, beta), abs=1e-12)
    X, w = prob.design, prob.sample_weight
    raw = kkt_oracle(X, prob.response, w, prob.lam * prob.penalty_factor, beta)
    curv = 2 * (w @ X**2)
    assert np.max(raw / curv) == pytest.approx(diag.max_kkt_violation, rel=1e-9, abs=1e-14)


@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_scale_equivariance(seed, c):
    prob = random_problem(seed, lam_kind="small")
    beta, _ = solve(prob, settings=TIGHT)
    scaled = PenalizedProblem(prob.design, c * prob.response, prob.sample_weight,
                              prob.penalty_factor, lam=c * prob.lam)
    beta_c, _ = solve(scaled, settings=TIGHT)
    np.testing.assert_allclose(beta_c, c * beta, atol=1e-8 * max(1.0, c))


@given(st.integers(0, 10_000))
def test_weight_fold_equivalence(seed):
    prob = random_problem(seed, lam_kind="small")
    i = seed % prob.n
    X = np.vstack([prob.design, prob.design[i]])
    y = np.append(prob.response, prob.response[i])
    w = np.append(prob.sample_weight, prob.sample_weight[i] / 2)
    w[i] /= 2
    dup = PenalizedProblem(X, y, w, prob.penalty_factor, lam=prob.lam)
    settings = SolverSettings(tolerance=1e-13)
    a, _ = solve(prob, settings=settings)
    b, _ = solve(dup, settings=settings)
    np.testing.assert_allclose(a, b, atol=1e-10)


@pytest.mark.parametrize("seed", range(6))
def test_warm_start_reaches_same_fixed_point(seed):
    prob = random_problem(seed, lam_kind="small")
    settings = SolverSettings(tolerance=1e-8)
    cold, _ = solve(prob, settings=settings)
    warm, _ = solve(prob, settings=settings, warm_start=np.random.default_rng(seed).normal(size=prob.p))
    np.testing.assert_allclose(warm, cold, atol=10 * settings.tolerance)


@pytest.mark.parametrize("seed", range(10))
def test_objective_non_increasing_per_sweep(seed):
    prob = random_problem(seed)
    beta, diag = solve(prob, settings=SolverSettings(tolerance=1e-10, debug=True))
    trace = np.array(diag.objective_trace)
    assert len(trace) == diag.iterations
    assert np.all(np.diff(trace) <= 1e-12 * np.abs(trace[:-1]) + 1e-14)
    assert diag.final_objective == pytest.approx(objective(prob, beta), rel=1e-14)


def test_objective_audit():
    prob = random_problem(7)
    beta, diag = solve(prob)
    f = direct_objective(prob.design, prob.response, prob.sample_weight,
                         prob.lam * prob.penalty_factor, beta)
    assert diag.final_objective == pytest.approx(f, rel=1e-8)


def test_degenerate_columns():
    rng = np.random.default_rng(0)
    n = 20
    x = rng.normal(size=n)
    X = np.column_stack([np.ones(n), np.zeros(n), 3 * np.ones(n), x])
    y = 1 + 2 * x
    prob = PenalizedProblem(X, y, np.ones(n), [0.0, 1.0, 1.0, 1.0], lam=0.0)
    beta, diag = solve(prob, settings=TIGHT)
    assert beta[1] == 0.0 and beta[2] == 0.0
    np.testing.assert_allclose(beta[[0, 3]], [1.0, 2.0], atol=1e-8)
    bad = PenalizedProblem(X, y, np.ones(n), [0.0, 1.0, 0.0, 1.0])
    with pytest.raises(ValueError, match="rank-deficient"):
        solve(bad)


def test_max_sweeps_reports_non_convergence():
    prob = random_problem(1, lam_kind="zero")
    _, diag = solve(prob, settings=SolverSettings(tolerance=1e-14, max_sweeps=1))
    assert diag.iterations == 1
    assert not diag.converged


def test_empty_design():
    prob = PenalizedProblem(np.zeros((3, 0)), [1.0, 2.0, 3.0], np.ones(3), np.zeros(0))
    beta, diag = solve(prob)
    assert beta.shape == (0,) and diag.final_objective == pytest.approx(14.0)


@pytest.mark.parametrize("kwargs", [
    dict(sample_weight=[1.0, 0.0]), dict(penalty_factor=[-1.0]), dict(lam=-1.0),
    dict(penalty_order=3), dict(response=[1.0, np.nan]), dict(response=[1.0]),
])
def test_problem_validation(kwargs):
    base = dict(design=np.ones((2, 1)), response=[1.0, 2.0], sample_weight=[1.0, 1.0],
                penalty_factor=[1.0])
    base.update(kwargs)
    with pytest.raises(ValueError):
        PenalizedProblem(**base)


def test_problem_arrays_are_frozen():
    prob = random_problem(0)
    with pytest.raises(ValueError):
        prob.design[0, 0] = 1.0


def test_blocks_must_partition():
    prob = random_problem(2)
    with pytest.raises(ValueError):
        solve(prob, blocks=[[0]] if prob.p > 1 else [[0, 0]])
    with pytest.raises(ValueError):
        solve(prob, warm_start=np.zeros(prob.p + 1))


def test_quadratic_term_must_be_symmetric():
    with pytest.raises(ValueError):
        SmoothQuadraticTerm(np.array([[1.0, 2.0], [0.0, 1.0]]))
