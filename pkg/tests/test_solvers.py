import numpy as np
import pytest
from conftest import contraction_violations, planted_lasso

import apd
from apd.inner import InnerSolveError
from apd.schedule import ScalingState
from apd.solvers import (
    IterateState,
    SaddleReferenceError,
    SolverConfig,
    discrete_lyapunov,
    ex_apdfb_step,
    implicit_apd_step,
    lambda_invariant,
    residual_metrics,
    run_solver,
    semi_apd_step,
    semi_apdfb_step,
)


def zeros_state(n=2, m=1, gamma0=1.0):
    return IterateState(np.zeros(n), np.zeros(n), np.zeros(m),
                        ScalingState(1.0, gamma0, 0))


def saddle_state(saddle, gamma0=1.0):
    return IterateState(saddle.x_star.copy(), saddle.x_star.copy(),
                        saddle.lambda_star.copy(), ScalingState(1.0, gamma0, 0))


# ---------------------------------------------------------------------------
# implicit scheme
# ---------------------------------------------------------------------------

def test_implicit_step_example(qp1):
    out = implicit_apd_step(zeros_state(), qp1, 1.0)
    np.testing.assert_allclose(out.x, np.full(2, 1 / 7), atol=1e-14)
    np.testing.assert_allclose(out.v, np.full(2, 2 / 7), atol=1e-14)
    np.testing.assert_allclose(out.lam, [-3 / 7], atol=1e-14)
    np.testing.assert_allclose(lambda_invariant(out, qp1), [1.0], atol=1e-13)


def test_implicit_fixed_point(qp1, qp1_saddle):
    out = implicit_apd_step(saddle_state(qp1_saddle), qp1, 1.0)
    np.testing.assert_allclose(out.x, qp1_saddle.x_star, atol=1e-12)
    np.testing.assert_allclose(out.v, qp1_saddle.x_star, atol=1e-12)
    np.testing.assert_allclose(out.lam, qp1_saddle.lambda_star, atol=1e-12)


def test_implicit_dual_route_matches_dense_on_projection_problem():
    # h = 0, g = indicator of a box: the subproblem goes through Newton
    box = apd.Box(np.full(3, -0.2), np.full(3, 2.0))
    constraint = apd.MatrixConstraint([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]],
                                      [1.0, 1.2])
    p = apd.ProblemInstance(apd.ZeroObjective(3), apd.ZeroProx(box), constraint)
    state = zeros_state(3, 2)
    out = implicit_apd_step(state, p, 0.7)
    assert box.contains(out.x)
    # subproblem oracle: box-constrained argmin of the penalized objective
    theta_next = 1.0 / 1.7
    eta = 0.7 ** 2 / (1.0 * 1.7)
    shifted = -constraint.residual(state.x)  # lam0 - (A x0 - b)/theta0 = +b
    w = state.x - eta * constraint.apply_adjoint(shifted)

    def objective(x):
        res = constraint.residual(x)
        return (res @ res / (2 * theta_next)
                + ((x - w) @ (x - w)) / (2 * eta))

    from scipy.optimize import minimize
    ref = minimize(objective, np.zeros(3),
                   bounds=[(-0.2, 2.0)] * 3, method="L-BFGS-B",
                   options={"ftol": 1e-15, "gtol": 1e-12})
    np.testing.assert_allclose(out.x, ref.x, atol=1e-6)


def test_implicit_rejects_general_composite(qp1):
    p = apd.ProblemInstance(qp1.smooth, apd.L1Prox(0.5), qp1.constraint)
    with pytest.raises(InnerSolveError):
        implicit_apd_step(zeros_state(), p, 1.0)


# ---------------------------------------------------------------------------
# semi-implicit scheme
# ---------------------------------------------------------------------------

def test_semi_apd_step_example(qp1):
    alpha = 1 / np.sqrt(2)
    out = semi_apd_step(zeros_state(), qp1, alpha)
    np.testing.assert_allclose(out.x, np.full(2, 0.1213203), atol=1e-6)
    lam_hat = alpha * (qp1.constraint.apply(np.zeros(2)) - qp1.constraint.rhs)
    np.testing.assert_allclose(lam_hat, [-0.7071067], atol=1e-6)


def test_semi_apd_fixed_point(qp1, qp1_saddle):
    out = semi_apd_step(saddle_state(qp1_saddle), qp1, 0.5)
    np.testing.assert_allclose(out.x, qp1_saddle.x_star, atol=1e-12)
    np.testing.assert_allclose(out.lam, qp1_saddle.lambda_star, atol=1e-12)


def test_semi_apd_rejects_zero_operator():
    p = apd.ProblemInstance(
        apd.QuadraticObjective(np.ones(2)), apd.ZeroProx(),
        apd.MatrixConstraint(np.zeros((1, 2)), np.zeros(1), op_norm=0.0))
    rule = apd.StepRule("semi_apd", norm_a=p.constraint.op_norm)
    with pytest.raises(ValueError):
        apd.step_size(rule, ScalingState())


def test_semi_apd_augmented_prox_error():
    constraint = apd.MatrixConstraint([[1.0, 0.0]], [0.5], sigma_min=0.0)
    p = apd.ProblemInstance(apd.ZeroObjective(2), apd.L1Prox(1.0), constraint,
                            beta=0.0)
    # force an (invalid) augmented prox request by faking declared rank
    declared = apd.MatrixConstraint([[1.0, 0.0]], [0.5], sigma_min=1.0)
    p_bad = apd.ProblemInstance(apd.ZeroObjective(2), apd.L1Prox(1.0), declared,
                                beta=2.0)
    semi_apd_step(zeros_state(), p, 0.5)  # beta = 0 route works
    with pytest.raises(InnerSolveError, match="beta"):
        semi_apd_step(zeros_state(), p_bad, 0.5)


# ---------------------------------------------------------------------------
# forward-backward schemes
# ---------------------------------------------------------------------------

def test_semi_apdfb_matches_brute_force_joint_solve(qp1):
    out = semi_apdfb_step(zeros_state(), qp1, 1.0)
    # joint system in (v, lam): v + t A' lam = z, -alpha A v + theta lam = theta lam0 - alpha b
    theta, gamma, mu, alpha = 1.0, 1.0, 1.0, 1.0
    amat = qp1.constraint.matrix()
    tau = gamma + mu * alpha
    t = alpha / tau
    z = np.zeros(2)  # w = 0, grad h(0) = 0
    joint = np.zeros((3, 3))
    joint[:2, :2] = np.eye(2)
    joint[:2, 2:] = t * amat.T
    joint[2:, :2] = -alpha * amat
    joint[2:, 2:] = theta * np.eye(1)
    rhs = np.concatenate([z, theta * np.zeros(1) - alpha * qp1.constraint.rhs])
    sol = np.linalg.solve(joint, rhs)
    np.testing.assert_allclose(out.v, sol[:2], atol=1e-10)
    np.testing.assert_allclose(out.lam, sol[2:], atol=1e-10)
    np.testing.assert_allclose(out.x, (np.zeros(2) + alpha * sol[:2]) / 2, atol=1e-10)


def test_semi_apdfb_fixed_point(qp1, qp1_saddle):
    out = semi_apdfb_step(saddle_state(qp1_saddle), qp1, 1.0)
    np.testing.assert_allclose(out.x, qp1_saddle.x_star, atol=1e-11)
    np.testing.assert_allclose(out.v, qp1_saddle.x_star, atol=1e-11)
    np.testing.assert_allclose(out.lam, qp1_saddle.lambda_star, atol=1e-11)


def test_semi_apdfb_newton_route_matches_grid():
    # scalar l1 toy: n = m = 1, A = [1], b = 0
    constraint = apd.MatrixConstraint([[1.0]], [0.0])
    p = apd.ProblemInstance(apd.QuadraticObjective(np.ones(1)), apd.L1Prox(0.3),
                            constraint)
    state = IterateState(np.array([0.9]), np.array([0.9]), np.array([0.1]),
                         ScalingState(1.0, 1.0, 0))
    alpha = apd.step_size(apd.StepRule("semi_apdfb", lip_beta=1.0), state.scaling)
    out = semi_apdfb_step(state, p, alpha)
    # grid search over the scalar multiplier of the coupled subproblem
    theta, gamma, mu = 1.0, 1.0, 1.0
    y = (state.x + alpha * state.v) / (1 + alpha)
    tau = gamma + mu * alpha
    w = (gamma * state.v + mu * alpha * y) / tau
    t = alpha / tau
    z = w - t * p.smooth.gradient(y)
    lam_grid = np.linspace(-3, 3, 2000001)
    vgrid = np.sign(z - t * lam_grid) * np.maximum(np.abs(z - t * lam_grid) - t * 0.3, 0)
    resid = theta * lam_grid - alpha * vgrid - (theta * state.lam[0] - alpha * 0.0)
    lam_best = lam_grid[np.argmin(np.abs(resid))]
    v_best = np.sign(z - t * lam_best) * np.maximum(np.abs(z - t * lam_best) - t * 0.3, 0)
    np.testing.assert_allclose(out.v, v_best, atol=1e-5)
    np.testing.assert_allclose(out.lam, [lam_best], atol=1e-5)


def test_ex_apdfb_step_transcript(qp1):
    alpha = 1 / np.sqrt(3)  # theta = gamma = 1, L = 1, |A|^2 = 2
    out = ex_apdfb_step(zeros_state(), qp1, alpha)
    theta, gamma, mu = 1.0, 1.0, 1.0
    amat = qp1.constraint.matrix()
    y = np.zeros(2)
    tau = gamma + mu * alpha
    w = np.zeros(2)
    lam_hat = np.zeros(1) + (alpha / theta) * (amat @ np.zeros(2) - qp1.constraint.rhs)
    eta = alpha / tau
    v1 = w - eta * (qp1.smooth.gradient(y) + amat.T @ lam_hat)
    x1 = (np.zeros(2) + alpha * v1) / (1 + alpha)
    lam1 = np.zeros(1) + (alpha / theta) * (amat @ v1 - qp1.constraint.rhs)
    np.testing.assert_allclose(out.v, v1, atol=1e-14)
    np.testing.assert_allclose(out.x, x1, atol=1e-14)
    np.testing.assert_allclose(out.lam, lam1, atol=1e-14)


def test_ex_apdfb_fixed_point(qp1, qp1_saddle):
    out = ex_apdfb_step(saddle_state(qp1_saddle), qp1, 0.4)
    np.testing.assert_allclose(out.x, qp1_saddle.x_star, atol=1e-13)
    np.testing.assert_allclose(out.lam, qp1_saddle.lambda_star, atol=1e-13)


def test_ex_apdfb_reduces_to_accelerated_forward_backward():
    # zero constraint: the multiplier freezes and the step is plain FB
    constraint = apd.MatrixConstraint(np.zeros((1, 2)), np.zeros(1), op_norm=0.0)
    p = apd.ProblemInstance(apd.QuadraticObjective(np.array([1.0, 2.0])),
                            apd.L1Prox(0.2), constraint)
    state = IterateState(np.array([0.4, -0.7]), np.array([0.1, 0.2]),
                         np.zeros(1), ScalingState(1.0, 1.0, 0))
    alpha = 0.5
    out = ex_apdfb_step(state, p, alpha)
    np.testing.assert_array_equal(out.lam, state.lam)
    y = (state.x + alpha * state.v) / (1 + alpha)
    tau = 1.0 + 1.0 * alpha
    w = (state.v + alpha * y) / tau
    eta = alpha / tau
    expected_v = apd.soft_threshold(w - eta * p.smooth.gradient(y), eta * 0.2)
    np.testing.assert_allclose(out.v, expected_v, atol=1e-14)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def test_discrete_lyapunov_examples(qp1, qp1_saddle):
    assert discrete_lyapunov(saddle_state(qp1_saddle), qp1, qp1_saddle) \
        == pytest.approx(0.0)
    assert discrete_lyapunov(zeros_state(), qp1, qp1_saddle) == pytest.approx(0.625)
    stepped = implicit_apd_step(zeros_state(), qp1, 1.0)
    assert discrete_lyapunov(stepped, qp1, qp1_saddle) <= 0.3125


def test_residual_metrics_examples(qp1, qp1_saddle):
    at_star = residual_metrics(qp1, qp1_saddle.x_star, qp1_saddle.lambda_star,
                               qp1_saddle)
    np.testing.assert_allclose(at_star, (0.0, 0.0, 0.0), atol=1e-14)
    gaps = residual_metrics(qp1, np.zeros(2), np.zeros(1), qp1_saddle)
    np.testing.assert_allclose(gaps, (0.25, 1.0, 0.25))
    no_ref = residual_metrics(qp1, np.zeros(2), np.zeros(1))
    assert np.isnan(no_ref[0]) and no_ref[1] == 1.0 and np.isnan(no_ref[2])


def test_residual_metrics_flags_bad_reference(qp1, qp1_saddle):
    # an infeasible "x*" lets the Lagrangian gap go negative
    fake = apd.SaddlePoint(np.zeros(2), qp1_saddle.lambda_star, 0.0)
    with pytest.raises(SaddleReferenceError):
        residual_metrics(qp1, qp1_saddle.x_star, np.array([-3.0]), fake)


# ---------------------------------------------------------------------------
# run loop
# ---------------------------------------------------------------------------

def test_run_implicit_feasibility_certificate(qp1):
    run = run_solver(qp1, SolverConfig(scheme="implicit", alpha=1.0, max_iter=30))
    r0 = np.sqrt(2 * 0.625) + 0.5 + 1.0
    assert run.records[-1].feasibility <= 2.0 ** -30 * r0
    assert not contraction_violations(run.records)
    assert run.status == "max_iter"


def test_run_certificates_all_schemes(qp1):
    e0 = 0.625
    r0 = np.sqrt(2 * e0) + 0.5 + 1.0
    lam_star_norm = 0.5
    for scheme in ("implicit", "semi_apd", "semi_apdfb", "ex_apdfb"):
        run = run_solver(qp1, SolverConfig(scheme=scheme, alpha=1.0, max_iter=60))
        assert not contraction_violations(run.records), scheme
        for rec in run.records:
            assert rec.feasibility <= rec.theta * r0 * (1 + 1e-9), scheme
            assert rec.obj_gap <= rec.theta * (e0 + r0 * lam_star_norm) + 1e-12, scheme
            assert rec.lagrangian_gap >= -1e-12, scheme


def test_run_lambda_invariant_held(qp1):
    for scheme in ("implicit", "semi_apd", "semi_apdfb", "ex_apdfb"):
        cfg = SolverConfig(scheme=scheme, alpha=0.8, max_iter=40)
        problem = qp1
        run = run_solver(problem, cfg)
        state = run.state
        inv = lambda_invariant(state, problem)
        np.testing.assert_allclose(inv, [1.0], rtol=1e-9)


def test_run_zero_iterations(qp1):
    run = run_solver(qp1, SolverConfig(scheme="implicit", max_iter=0))
    assert len(run.records) == 1
    assert run.records[0].k == 0 and run.records[0].alpha == 0.0


def test_run_stop_tol_reports_converged(qp1):
    run = run_solver(qp1, SolverConfig(scheme="implicit", alpha=1.0,
                                       max_iter=500, stop_tol=1e-6))
    assert run.status == "converged"
    assert run.records[-1].obj_gap + run.records[-1].feasibility <= 1e-6


def test_run_deterministic(qp1):
    a = run_solver(qp1, SolverConfig(scheme="semi_apd", max_iter=50))
    b = run_solver(qp1, SolverConfig(scheme="semi_apd", max_iter=50))
    for ra, rb in zip(a.records, b.records):
        assert ra == rb


def test_membership_box_instances():
    # x stays feasible for every scheme; v and y additionally for the
    # forward-backward schemes
    box = apd.Box(np.full(3, -0.1), np.full(3, 0.8))
    constraint = apd.MatrixConstraint([[1.0, 1.0, 1.0]], [1.0])
    p = apd.ProblemInstance(apd.QuadraticObjective(np.array([1.0, 2.0, 3.0])),
                            apd.ZeroProx(box), constraint)
    for scheme in ("semi_apd", "semi_apdfb", "ex_apdfb"):
        run = run_solver(p, SolverConfig(scheme=scheme, max_iter=40))
        final = run.state
        assert box.contains(final.x, tol=1e-9), scheme
        if scheme in ("semi_apdfb", "ex_apdfb"):
            assert box.contains(final.v, tol=1e-9), scheme
            assert box.contains(final.y, tol=1e-9), scheme


def test_membership_implicit_prox_route():
    box = apd.Box(np.zeros(2), np.ones(2))
    p = apd.ProblemInstance(apd.ZeroObjective(2), apd.ZeroProx(box),
                            apd.MatrixConstraint([[1.0, 2.0]], [0.9]))
    run = run_solver(p, SolverConfig(scheme="implicit", alpha=1.0, max_iter=15))
    assert box.contains(run.state.x, tol=1e-8)
    assert run.records[-1].feasibility <= 1e-3


def test_composite_runs_contract(qp1):
    # horizons keep theta well above the floating-point floor: by then the
    # strongly convex run has contracted E by ~1e9 already
    for ridge, fb_iters in ((0.0, 120), (0.5, 40)):
        p, sp = planted_lasso(21, ridge=ridge)
        run = run_solver(p, SolverConfig(scheme="ex_apdfb", max_iter=300,
                                         reference=sp))
        assert not contraction_violations(run.records)
        run_fb = run_solver(p, SolverConfig(scheme="semi_apdfb",
                                            max_iter=fb_iters, reference=sp))
        assert not contraction_violations(run_fb.records)


def test_scale_exhaustion_status(qp1):
    run = run_solver(qp1, SolverConfig(scheme="implicit", alpha=1e6, max_iter=100))
    assert run.status == "scale_exhausted"
    assert len(run.records) < 100  # retired well before max_iter
    assert run.records[-1].theta < 1e-10
