"""The four discrete primal-dual schemes, their run loop, and diagnostics."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .inner import (
    DualMapContext,
    InnerSolveError,
    PcgResult,
    assemble_saddle_subproblem,
    pcg_solve,
    ssn_solve,
)
from .model import NoReferenceError, solve_reference_saddle
from .oracles import UnsupportedOracleError, ZeroProx
from .schedule import ScalingState, StepRule, advance_scaling, step_size

_EPS_REL_MIN = 1e-13
# the implicit subproblem adds A'A/theta to a dense matrix, which turns
# exactly singular once 1/theta crosses 2^53; the other schemes only ever
# form theta-ratios and can run the scale far further down
_THETA_RUN_FLOOR = {"implicit": 1e-13}
_THETA_RUN_FLOOR_DEFAULT = 1e-140


class SaddleReferenceError(RuntimeError):
    """The supplied saddle point is inconsistent (negative Lagrangian gap)."""


@dataclass(frozen=True)
class IterateState:
    """Primal-dual iterate: ``x`` feasible, momentum ``v``, multiplier ``lam``.

    ``y`` holds the interpolation point of the forward-backward schemes and
    ``inner_iters`` the inner-solver work that produced this iterate.
    """

    x: np.ndarray
    v: np.ndarray
    lam: np.ndarray
    scaling: ScalingState
    y: np.ndarray = None
    inner_iters: int = 0


@dataclass
class InnerConfig:
    """Inner-solver tolerances: targets shrink with the decay factor.

    The working tolerance is ``max(min(tol_cap, theta * tol_scale),
    tol_floor)``; the floor exists because doubles cannot certify relative
    residuals much below 1e-13.
    """

    tol_cap: float = 1e-10
    tol_scale: float = 1e-6
    tol_floor: float = 1e-12
    warm_start: bool = True
    max_newton: int = 100
    pcg_i_max: int = 0  # 0 -> sized from the system dimension

    def tolerance(self, theta):
        return max(min(self.tol_cap, theta * self.tol_scale), self.tol_floor)


@dataclass
class SolverConfig:
    scheme: str
    gamma0: float = 1.0
    beta: float = 0.0
    max_iter: int = 1000
    stop_tol: float = 0.0
    alpha: float = 1.0  # free step size of the implicit scheme
    inner: InnerConfig = field(default_factory=InnerConfig)
    reference: object = None  # SaddlePoint, or None to auto-detect
    x0: np.ndarray = None
    v0: np.ndarray = None
    lam0: np.ndarray = None
    timing: bool = False


@dataclass
class IterationRecord:
    k: int
    alpha: float
    theta: float
    gamma: float
    obj_gap: float
    feasibility: float
    lagrangian_gap: float
    lyapunov: float
    inner_iters: int
    wall_ns: int


@dataclass
class SolverRun:
    records: list
    status: str  # converged | max_iter | scale_exhausted
    state: IterateState
    reference: object


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def _shifted_multiplier(state, problem):
    return state.lam - problem.constraint.residual(state.x) / state.scaling.theta


def lambda_invariant(state, problem):
    """The conserved quantity ``lam_k - (A x_k - b) / theta_k``."""
    return _shifted_multiplier(state, problem)


def _solve_spd_absolute(system, tol_abs, i_max, d0=None):
    """PCG driven to an absolute preconditioned-residual target."""
    start = np.zeros(system.dim) if d0 is None else np.asarray(d0, dtype=float)
    r = system.rhs - system.apply(start)
    delta0 = float(r @ system.apply_minv(r))
    if np.sqrt(max(delta0, 0.0)) <= tol_abs:
        return PcgResult(start.copy(), 0, True, delta0, delta0)
    eps = min(max(tol_abs / np.sqrt(delta0), _EPS_REL_MIN), 0.9)
    return pcg_solve(system, eps, i_max, d0=start)


def _inner_scale(system):
    r = system.apply_minv(system.rhs)
    return 1.0 + float(np.sqrt(max(system.rhs @ r, 0.0)))


def _prox_full_objective(problem, eta, point, beta):
    """Prox of ``f_beta = h + g + (beta/2)|Ax-b|^2`` over the feasible set."""
    smooth, nonsmooth = problem.smooth, problem.nonsmooth
    if smooth.is_quadratic and isinstance(nonsmooth, ZeroProx):
        feas = nonsmooth.feasible_set
        diagonal = getattr(smooth, "diag", None)
        if feas.is_whole_space:
            if beta == 0 and diagonal is not None:
                return (point - eta * smooth.linear_term()) / (1.0 + eta * diagonal)
            amat = problem.constraint.matrix()
            n = amat.shape[1]
            h = smooth.hessian_matrix() + np.eye(n) / eta
            rhs = point / eta - smooth.linear_term()
            if beta > 0:
                h = h + beta * (amat.T @ amat)
                rhs = rhs + beta * (amat.T @ problem.constraint.rhs)
            return np.linalg.solve(h, rhs)
        if beta == 0 and diagonal is not None:
            free = (point - eta * smooth.linear_term()) / (1.0 + eta * diagonal)
            return feas.project(free)
        raise InnerSolveError(
            "no closed-form prox for a quadratic over this set with beta > 0; "
            "set beta=0", np.nan)
    if smooth.is_zero:
        if beta > 0:
            raise InnerSolveError(
                "prox of the augmented objective is unavailable; set beta=0", np.nan)
        return nonsmooth.prox(eta, point)
    raise InnerSolveError(
        "full-objective prox needs a quadratic smooth part or a pure prox part",
        np.nan)


# ---------------------------------------------------------------------------
# scheme steps
# ---------------------------------------------------------------------------

def implicit_apd_step(state, problem, alpha, inner=None):
    """Fully implicit step; runs with ``mu_beta = 0`` and ``beta = 0``.

    Quadratic unconstrained objectives get an exact dense subproblem solve;
    pure prox objectives go through the dual nonlinear equation and
    semi-smooth Newton.
    """
    if alpha <= 0:
        raise ValueError("step size must be positive")
    inner = inner or InnerConfig()
    sc = state.scaling
    theta_next = sc.theta / (1.0 + alpha)
    tau = sc.gamma * (1.0 + alpha)
    y = (state.x + alpha * state.v) / (1.0 + alpha)
    eta = alpha ** 2 / tau
    shifted = _shifted_multiplier(state, problem)
    constraint = problem.constraint
    inner_iters = 0
    if problem.smooth.is_quadratic and problem.is_smooth_unconstrained:
        amat = constraint.matrix()
        n = amat.shape[1]
        w = y - eta * constraint.apply_adjoint(shifted)
        h = (problem.smooth.hessian_matrix() + (amat.T @ amat) / theta_next
             + np.eye(n) / eta)
        rhs = (-problem.smooth.linear_term()
               + constraint.apply_adjoint(constraint.rhs) / theta_next + w / eta)
        x_next = np.linalg.solve(h, rhs)
    elif problem.smooth.is_zero:
        r = theta_next * shifted - constraint.rhs
        ctx = DualMapContext(theta_next, 1.0, eta, y, constraint,
                             problem.nonsmooth, r=r)
        tol = inner.tolerance(sc.theta) * (1.0 + float(np.linalg.norm(r)))
        warm = state.lam if inner.warm_start else np.zeros_like(state.lam)
        result = ssn_solve(ctx, warm, tol=tol, max_newton=inner.max_newton)
        if not result.converged:
            raise InnerSolveError("implicit subproblem Newton solve failed",
                                  result.residual_norms[-1])
        x_next = ctx.primal_point(result.lam)
        inner_iters = result.iterations
    else:
        raise InnerSolveError(
            "implicit subproblem needs a quadratic objective or a pure prox part",
            np.nan)
    v_next = x_next + (x_next - state.x) / alpha
    lam_next = shifted + constraint.residual(x_next) / theta_next
    return IterateState(x_next, v_next, lam_next,
                        advance_scaling(sc, alpha, 0.0), inner_iters=inner_iters)


def semi_apd_step(state, problem, alpha):
    """Semi-implicit step: explicit multiplier, full prox of the objective."""
    if alpha <= 0:
        raise ValueError("step size must be positive")
    sc = state.scaling
    beta = problem.effective_beta
    mu_beta = problem.mu_beta
    constraint = problem.constraint
    lam_hat = state.lam + (alpha / sc.theta) * constraint.residual(state.v)
    tau = sc.gamma + mu_beta * alpha + sc.gamma * alpha
    y = ((sc.gamma + mu_beta * alpha) * state.x + sc.gamma * alpha * state.v) / tau
    eta = alpha ** 2 / tau
    point = y - eta * constraint.apply_adjoint(lam_hat)
    x_next = _prox_full_objective(problem, eta, point, beta)
    v_next = x_next + (x_next - state.x) / alpha
    lam_next = state.lam + (alpha / sc.theta) * constraint.residual(v_next)
    return IterateState(x_next, v_next, lam_next,
                        advance_scaling(sc, alpha, mu_beta))


def semi_apdfb_step(state, problem, alpha, inner=None):
    """Corrected semi-implicit forward-backward step.

    The coupled ``(lam, v)`` subproblem reduces to a linear SPD system when
    the nonsmooth part vanishes over the whole space (solved by PCG on the
    smaller of the dual/primal reductions) and otherwise to the dual
    nonlinear equation (solved by semi-smooth Newton).
    """
    if alpha <= 0:
        raise ValueError("step size must be positive")
    inner = inner or InnerConfig()
    sc = state.scaling
    beta = problem.effective_beta
    mu_beta = problem.mu_beta
    constraint = problem.constraint
    y = (state.x + alpha * state.v) / (1.0 + alpha)
    tau = sc.gamma + mu_beta * alpha
    w = (sc.gamma * state.v + mu_beta * alpha * y) / tau
    t = alpha / tau
    z = w - t * problem.smooth_beta_gradient(y, beta)
    ctx = DualMapContext.for_step(sc.theta, alpha, t, z, constraint,
                                  problem.nonsmooth, state.lam)
    tol = inner.tolerance(sc.theta)
    if problem.is_smooth_unconstrained:
        dual, primal = assemble_saddle_subproblem(ctx, state.lam)
        i_max = inner.pcg_i_max or 30 * max(dual.dim, primal.dim) + 200
        if dual.dim <= primal.dim:
            warm = state.lam if inner.warm_start else None
            result = _solve_spd_absolute(dual, tol * _inner_scale(dual), i_max, warm)
            v_next = z - t * constraint.apply_adjoint(result.solution)
        else:
            warm = state.v if inner.warm_start else None
            result = _solve_spd_absolute(primal, tol * _inner_scale(primal), i_max, warm)
            v_next = result.solution
        if not result.converged:
            raise InnerSolveError("saddle subproblem PCG did not converge",
                                  np.sqrt(max(result.delta, 0.0)))
        inner_iters = result.iterations
    else:
        warm = state.lam if inner.warm_start else np.zeros_like(state.lam)
        tol_abs = tol * (1.0 + float(np.linalg.norm(ctx.r)))
        result = ssn_solve(ctx, warm, tol=tol_abs, max_newton=inner.max_newton)
        if not result.converged:
            raise InnerSolveError("dual Newton solve failed",
                                  result.residual_norms[-1])
        v_next = ctx.primal_point(result.lam)
        inner_iters = result.iterations
    lam_next = state.lam + (alpha / sc.theta) * constraint.residual(v_next)
    x_next = (state.x + alpha * v_next) / (1.0 + alpha)
    return IterateState(x_next, v_next, lam_next,
                        advance_scaling(sc, alpha, mu_beta), y=y,
                        inner_iters=inner_iters)


def ex_apdfb_step(state, problem, alpha):
    """Corrected explicit forward-backward step: one prox, no inner loop."""
    if alpha <= 0:
        raise ValueError("step size must be positive")
    sc = state.scaling
    beta = problem.effective_beta
    mu_beta = problem.mu_beta
    constraint = problem.constraint
    y = (state.x + alpha * state.v) / (1.0 + alpha)
    tau = sc.gamma + mu_beta * alpha
    w = (sc.gamma * state.v + mu_beta * alpha * y) / tau
    eta = alpha / tau
    lam_hat = state.lam + (alpha / sc.theta) * constraint.residual(state.v)
    point = w - eta * (problem.smooth_beta_gradient(y, beta)
                       + constraint.apply_adjoint(lam_hat))
    v_next = problem.nonsmooth.prox(eta, point)
    x_next = (state.x + alpha * v_next) / (1.0 + alpha)
    lam_next = state.lam + (alpha / sc.theta) * constraint.residual(v_next)
    return IterateState(x_next, v_next, lam_next,
                        advance_scaling(sc, alpha, mu_beta), y=y)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def discrete_lyapunov(state, problem, saddle, beta=None):
    """Gap-plus-distances merit, nonnegative at any true saddle point."""
    from .model import evaluate_augmented_lagrangian

    beta = problem.effective_beta if beta is None else beta
    gap = (evaluate_augmented_lagrangian(problem, state.x, saddle.lambda_star, beta)
           - evaluate_augmented_lagrangian(problem, saddle.x_star, state.lam, beta))
    dv = state.v - saddle.x_star
    dlam = state.lam - saddle.lambda_star
    return (gap + 0.5 * state.scaling.gamma * float(dv @ dv)
            + 0.5 * state.scaling.theta * float(dlam @ dlam))


def residual_metrics(problem, x, lam, saddle=None):
    """``(|f - f*|, |Ax - b|, Lagrangian gap)``; gaps are nan without a saddle."""
    from .model import evaluate_augmented_lagrangian

    feasibility = float(np.linalg.norm(problem.constraint.residual(x)))
    if saddle is None:
        return np.nan, feasibility, np.nan
    obj_gap = abs(problem.objective(x) - saddle.f_star)
    lagrangian_gap = (
        evaluate_augmented_lagrangian(problem, x, saddle.lambda_star, 0.0)
        - evaluate_augmented_lagrangian(problem, saddle.x_star, lam, 0.0))
    if lagrangian_gap < -1e-10 * max(1.0, abs(saddle.f_star)):
        raise SaddleReferenceError(
            f"negative Lagrangian gap {lagrangian_gap:.3e}: reference saddle "
            "point is inconsistent")
    return obj_gap, feasibility, lagrangian_gap


# ---------------------------------------------------------------------------
# run loop
# ---------------------------------------------------------------------------

_STEP_NEEDS_INNER = {"implicit", "semi_apdfb"}


def make_step_rule(problem, config):
    if config.scheme == "implicit":
        return StepRule("implicit", alpha=config.alpha)
    if config.scheme == "semi_apd":
        return StepRule("semi_apd", norm_a=problem.constraint.op_norm,
                        mu_beta=problem.mu_beta)
    if config.scheme == "semi_apdfb":
        return StepRule("semi_apdfb", norm_a=problem.constraint.op_norm,
                        lip_beta=problem.lip_beta, mu_beta=problem.mu_beta)
    if config.scheme == "ex_apdfb":
        return StepRule("ex_apdfb", norm_a=problem.constraint.op_norm,
                        lip_beta=problem.lip_beta, mu_beta=problem.mu_beta)
    raise ValueError(f"unknown scheme {config.scheme!r}")


def initial_state(problem, config):
    n = problem.constraint.cols
    m = problem.constraint.rows
    x0 = problem.nonsmooth.prox(1.0, np.zeros(n)) if config.x0 is None \
        else np.asarray(config.x0, dtype=float)
    v0 = x0.copy() if config.v0 is None else np.asarray(config.v0, dtype=float)
    lam0 = np.zeros(m) if config.lam0 is None else np.asarray(config.lam0, dtype=float)
    return IterateState(x0, v0, lam0, ScalingState(1.0, config.gamma0, 0))


def _take_step(state, problem, alpha, config):
    if config.scheme == "implicit":
        return implicit_apd_step(state, problem, alpha, config.inner)
    if config.scheme == "semi_apd":
        return semi_apd_step(state, problem, alpha)
    if config.scheme == "semi_apdfb":
        return semi_apdfb_step(state, problem, alpha, config.inner)
    return ex_apdfb_step(state, problem, alpha)


def run_solver(problem, config):
    """Run one scheme on one problem, recording per-iteration diagnostics.

    Stops on ``stop_tol`` over objective gap plus feasibility when a
    reference saddle point is available (otherwise over the KKT residual),
    at ``max_iter``, or when the decay factor underflows. Deterministic for
    a fixed configuration; wall clocks are recorded only with ``timing``.
    """
    from .model import kkt_residual

    if config.scheme == "implicit" and problem.beta != 0.0:
        problem = dataclasses.replace(problem, beta=0.0)
    reference = config.reference
    if reference is None:
        try:
            reference = solve_reference_saddle(problem)
        except (NoReferenceError, UnsupportedOracleError):
            reference = None
    rule = make_step_rule(problem, config)
    state = initial_state(problem, config)
    records = [_record(0, 0.0, state, problem, reference)]
    status = "max_iter"
    floor = _THETA_RUN_FLOOR.get(config.scheme, _THETA_RUN_FLOOR_DEFAULT)
    for k in range(config.max_iter):
        alpha = step_size(rule, state.scaling)
        if state.scaling.exhausted or state.scaling.theta / (1.0 + alpha) < floor:
            status = "scale_exhausted"
            break
        started = time.perf_counter_ns() if config.timing else 0
        state = _take_step(state, problem, alpha, config)
        elapsed = time.perf_counter_ns() - started if config.timing else 0
        records.append(_record(k + 1, alpha, state, problem, reference, elapsed))
        if config.stop_tol > 0:
            rec = records[-1]
            if reference is not None:
                done = rec.obj_gap + rec.feasibility <= config.stop_tol
            else:
                feas, stat = kkt_residual(problem, state.x, state.lam)
                done = feas + stat <= config.stop_tol
            if done:
                status = "converged"
                break
    return SolverRun(records, status, state, reference)


def _record(k, alpha, state, problem, reference, wall_ns=0):
    obj_gap, feasibility, lagrangian_gap = residual_metrics(
        problem, state.x, state.lam, reference)
    lyap = discrete_lyapunov(state, problem, reference) if reference is not None \
        else np.nan
    return IterationRecord(
        k=k, alpha=alpha, theta=state.scaling.theta, gamma=state.scaling.gamma,
        obj_gap=obj_gap, feasibility=feasibility, lagrangian_gap=lagrangian_gap,
        lyapunov=lyap, inner_iters=state.inner_iters, wall_ns=wall_ns)
