import numpy as np
import pytest

import apd
from apd.model import NoReferenceError, NormEstimateError
from conftest import planted_lasso


def test_augmented_lagrangian_examples(qp1, qp1_saddle):
    val = apd.evaluate_augmented_lagrangian(qp1, np.zeros(2), np.array([1.0]), 0.0)
    assert val == pytest.approx(-1.0)
    star = apd.evaluate_augmented_lagrangian(qp1, qp1_saddle.x_star, np.array([3.7]), 0.0)
    assert star == pytest.approx(0.25)
    pen = apd.evaluate_augmented_lagrangian(qp1, np.zeros(2), np.array([0.0]), 2.0)
    assert pen == pytest.approx(1.0)


def test_augmented_lagrangian_constant_in_lambda_at_solution(qp1, qp1_saddle):
    rng = np.random.default_rng(0)
    vals = [apd.evaluate_augmented_lagrangian(qp1, qp1_saddle.x_star,
                                              rng.standard_normal(1), 0.5)
            for _ in range(50)]
    np.testing.assert_allclose(vals, qp1_saddle.f_star, atol=1e-12)


def test_augmented_lagrangian_indicator(qp1):
    boxed = apd.ProblemInstance(qp1.smooth,
                                apd.ZeroProx(apd.Box(np.zeros(2), np.ones(2))),
                                qp1.constraint)
    assert apd.evaluate_augmented_lagrangian(
        boxed, np.array([2.0, 0.0]), np.zeros(1), 0.0) == np.inf


def test_augmented_lagrangian_dimension_errors(qp1):
    with pytest.raises(ValueError):
        apd.evaluate_augmented_lagrangian(qp1, np.zeros(3), np.zeros(1), 0.0)
    with pytest.raises(ValueError):
        apd.evaluate_augmented_lagrangian(qp1, np.zeros(2), np.zeros(2), 0.0)


def test_kkt_residual_examples(qp1, qp1_saddle):
    assert apd.kkt_residual(qp1, qp1_saddle.x_star, qp1_saddle.lambda_star) == (0.0, 0.0)
    feas, stat = apd.kkt_residual(qp1, np.zeros(2), np.zeros(1))
    assert (feas, stat) == (1.0, 0.0)
    feas, stat = apd.kkt_residual(qp1, qp1_saddle.x_star, np.zeros(1))
    assert feas == pytest.approx(0.0, abs=1e-15)
    assert stat == pytest.approx(np.sqrt(0.5))


def test_kkt_residual_composite_uses_prox_residual():
    p, sp = planted_lasso(5)
    feas, stat = apd.kkt_residual(p, sp.x_star, sp.lambda_star)
    assert feas < 1e-12 and stat < 1e-12
    _, stat_off = apd.kkt_residual(p, sp.x_star, sp.lambda_star + 0.1)
    assert stat_off > 1e-3


def test_operator_norm_examples():
    assert apd.operator_norm_estimate(
        apd.MatrixConstraint([[1.0, 1.0]], [0.0], op_norm=0.0)) == pytest.approx(np.sqrt(2))
    eye3 = apd.MatrixConstraint(np.eye(3), np.zeros(3), op_norm=0.0)
    assert apd.operator_norm_estimate(eye3) == pytest.approx(1.0)
    diag = apd.MatrixConstraint(np.diag([3.0, 1.0]), np.zeros(2), op_norm=0.0)
    assert apd.operator_norm_estimate(diag) == pytest.approx(3.0, rel=1e-8)


def test_operator_norm_deterministic_and_failing():
    c = apd.MatrixConstraint(np.diag([3.0, 1.0]), np.zeros(2), op_norm=0.0)
    a = apd.operator_norm_estimate(c, seed=7)
    b = apd.operator_norm_estimate(c, seed=7)
    assert a == b
    with pytest.raises(NormEstimateError) as info:
        apd.operator_norm_estimate(c, tol=0.0, max_iter=3)
    assert info.value.estimate > 0


def test_reference_saddle_examples(qp1):
    sp = apd.solve_reference_saddle(qp1)
    np.testing.assert_allclose(sp.x_star, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(sp.lambda_star, [-0.5], atol=1e-12)

    p2 = apd.ProblemInstance(apd.QuadraticObjective(np.ones(2)), apd.ZeroProx(),
                             apd.MatrixConstraint(np.eye(2), [1.0, 2.0]))
    sp2 = apd.solve_reference_saddle(p2)
    np.testing.assert_allclose(sp2.x_star, [1.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(sp2.lambda_star, [-1.0, -2.0], atol=1e-12)

    p3 = apd.ProblemInstance(apd.QuadraticObjective(np.array([1.0, 4.0])),
                             apd.ZeroProx(), apd.MatrixConstraint([[1.0, 1.0]], [1.0]))
    sp3 = apd.solve_reference_saddle(p3)
    np.testing.assert_allclose(sp3.x_star, [0.8, 0.2], atol=1e-12)
    np.testing.assert_allclose(sp3.lambda_star, [-0.8], atol=1e-12)


def test_reference_saddle_rejects_nonquadratic():
    p, _ = planted_lasso(2)
    with pytest.raises(NoReferenceError):
        apd.solve_reference_saddle(p)


def test_beta_ignored_without_declared_rank(qp1):
    p = apd.ProblemInstance(qp1.smooth, qp1.nonsmooth, qp1.constraint, beta=5.0)
    assert p.effective_beta == 0.0
    assert p.mu_beta == 1.0
    declared = apd.MatrixConstraint(np.eye(2), np.zeros(2), sigma_min=1.0)
    p2 = apd.ProblemInstance(qp1.smooth, apd.ZeroProx(), declared, beta=5.0)
    assert p2.effective_beta == 5.0
    assert p2.mu_beta == pytest.approx(6.0)
    assert p2.lip_beta == pytest.approx(6.0)


def test_problem_file_round_trip(tmp_path):
    path = tmp_path / "instance.txt"
    rng = np.random.default_rng(4)
    amat = rng.standard_normal((2, 3))
    rhs = rng.standard_normal(2)
    p = apd.ProblemInstance(apd.QuadraticObjective(np.array([1.0, 2.0, 3.0])),
                            apd.ZeroProx(), apd.MatrixConstraint(amat, rhs),
                            beta=0.25)
    apd.save_problem(p, path)
    q = apd.load_problem(path)
    np.testing.assert_array_equal(q.constraint.matrix(), amat)
    np.testing.assert_array_equal(q.constraint.rhs, rhs)
    np.testing.assert_array_equal(q.smooth.diag, [1.0, 2.0, 3.0])
    assert q.beta == 0.25

    lasso = apd.ProblemInstance(apd.QuadraticObjective(np.ones(3)),
                                apd.L1Prox(0.7), apd.MatrixConstraint(amat, rhs))
    apd.save_problem(lasso, path)
    q2 = apd.load_problem(path)
    assert isinstance(q2.nonsmooth, apd.L1Prox)
    assert q2.nonsmooth.weight == 0.7

    logistic = apd.ProblemInstance(
        apd.LogisticObjective(rng.standard_normal((4, 3)),
                              np.array([1.0, -1.0, 1.0, -1.0]), ridge=0.5),
        apd.ZeroProx(), apd.MatrixConstraint(amat, rhs))
    apd.save_problem(logistic, path)
    q3 = apd.load_problem(path)
    x = rng.standard_normal(3)
    assert q3.smooth.value(x) == pytest.approx(logistic.smooth.value(x))
    np.testing.assert_allclose(q3.smooth.gradient(x), logistic.smooth.gradient(x))


def test_problem_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("2 1 0.0 1 1 1 mystery 1 2\n")
    with pytest.raises(ValueError):
        apd.load_problem(path)
