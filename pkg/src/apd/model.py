"""Problem definitions: linear constraints, instances, and KKT diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracles import (
    L1Prox,
    LogisticObjective,
    ProxFunction,
    QuadraticObjective,
    SmoothOracle,
    UnsupportedOracleError,
    ZeroProx,
)
from .sets import RealSpace


class NormEstimateError(RuntimeError):
    """Power iteration failed to converge; carries the last estimate."""

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


class NoReferenceError(RuntimeError):
    """The problem has no closed-form reference saddle point."""


class LinearConstraint:
    """Abstract linear map ``A`` with right-hand side ``b`` for ``Ax = b``.

    Implementations provide matrix-free ``apply``/``apply_adjoint`` so sparse
    operators (e.g. graph Laplacian blocks) plug into every solver unchanged.
    ``sigma_min`` is declared, never estimated: it stays 0 unless the user
    asserts full column rank, in which case augmentation is allowed to use it.
    """

    rows = 0
    cols = 0
    op_norm = 0.0
    sigma_min = 0.0

    @property
    def rhs(self):
        raise NotImplementedError

    def apply(self, x):
        raise NotImplementedError

    def apply_adjoint(self, lam):
        raise NotImplementedError

    def residual(self, x):
        return self.apply(x) - self.rhs

    def matrix(self):
        """Dense matrix when available; raises otherwise."""
        raise UnsupportedOracleError(f"{type(self).__name__} has no dense form")


class MatrixConstraint(LinearConstraint):
    def __init__(self, matrix, rhs, sigma_min=0.0, op_norm=None):
        self._matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self._rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        self.rows, self.cols = self._matrix.shape
        if self._rhs.shape != (self.rows,):
            raise ValueError("rhs length does not match the number of rows")
        self.sigma_min = float(sigma_min)
        if op_norm is None:
            op_norm = operator_norm_estimate(self)
        self.op_norm = float(op_norm)

    @property
    def rhs(self):
        return self._rhs

    def apply(self, x):
        return self._matrix @ x

    def apply_adjoint(self, lam):
        return self._matrix.T @ lam

    def matrix(self):
        return self._matrix


@dataclass(frozen=True)
class SaddlePoint:
    x_star: np.ndarray
    lambda_star: np.ndarray
    f_star: float


@dataclass(frozen=True)
class ProblemInstance:
    """Composite instance ``min h(x) + g(x) s.t. Ax = b, x in X``.

    ``beta`` is the augmentation weight; it only takes effect when the
    constraint declares ``sigma_min > 0`` (full column rank), following the
    rule that augmentation is useless otherwise.
    """

    smooth: SmoothOracle
    nonsmooth: ProxFunction
    constraint: LinearConstraint
    beta: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.smooth.dim and self.smooth.dim != self.constraint.cols:
            raise ValueError("objective and constraint dimensions disagree")

    @property
    def dim(self):
        return self.constraint.cols

    @property
    def effective_beta(self):
        return self.beta if self.constraint.sigma_min > 0 else 0.0

    @property
    def mu_beta(self):
        return self.smooth.mu + self.effective_beta * self.constraint.sigma_min ** 2

    @property
    def lip_beta(self):
        return self.smooth.lip + self.effective_beta * self.constraint.op_norm ** 2

    def objective(self, x):
        return self.smooth.value(x) + self.nonsmooth.value(x)

    def smooth_beta_gradient(self, x, beta=None):
        """Gradient of ``h + (beta/2)|Ax-b|^2`` at x."""
        beta = self.effective_beta if beta is None else beta
        grad = self.smooth.gradient(x)
        if beta > 0:
            grad = grad + beta * self.constraint.apply_adjoint(self.constraint.residual(x))
        return grad

    @property
    def is_smooth_unconstrained(self):
        return self.nonsmooth.is_zero_over_whole_space


def evaluate_augmented_lagrangian(problem, x, lam, beta):
    """Augmented Lagrangian ``f(x) + (beta/2)|Ax-b|^2 + <lam, Ax-b>``.

    Returns ``inf`` when x is outside the feasible set (indicator active).
    """
    x = np.asarray(x, dtype=float)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if x.shape != (problem.constraint.cols,):
        raise ValueError("x has the wrong dimension")
    if lam.shape != (problem.constraint.rows,):
        raise ValueError("lambda has the wrong dimension")
    fval = problem.objective(x)
    if not np.isfinite(fval):
        return np.inf
    res = problem.constraint.residual(x)
    return fval + 0.5 * beta * float(res @ res) + float(lam @ res)


def kkt_residual(problem, x, lam):
    """Feasibility and stationarity residuals at ``(x, lam)``.

    Stationarity is the plain gradient norm for smooth unconstrained
    objectives and otherwise the prox-gradient residual at unit step:
    ``|x - prox_g(1, x - (grad h(x) + A' lam))|``.
    """
    x = np.asarray(x, dtype=float)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if x.shape != (problem.constraint.cols,) or lam.shape != (problem.constraint.rows,):
        raise ValueError("dimension mismatch")
    feas = float(np.linalg.norm(problem.constraint.residual(x)))
    grad = problem.smooth.gradient(x) + problem.constraint.apply_adjoint(lam)
    if problem.is_smooth_unconstrained:
        stat = float(np.linalg.norm(grad))
    else:
        stat = float(np.linalg.norm(x - problem.nonsmooth.prox(1.0, x - grad)))
    return feas, stat


def prox_over_set(g, eta, x):
    """Proximal map of ``g`` over its feasible set at parameter ``eta > 0``."""
    if eta <= 0:
        raise ValueError("prox parameter must be positive")
    return g.prox(eta, np.asarray(x, dtype=float))


def operator_norm_estimate(constraint, tol=1e-10, max_iter=500, seed=0):
    """Spectral norm of ``A`` by power iteration on ``A'A``.

    Deterministic for a fixed ``seed``. Raises :class:`NormEstimateError`
    (carrying the last estimate) if the value has not settled within
    ``max_iter`` sweeps.
    """
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(constraint.cols)
    nu = np.linalg.norm(u)
    if nu == 0:
        raise ValueError("degenerate start vector")
    u /= nu
    sigma = 0.0
    for _ in range(max_iter):
        w = constraint.apply_adjoint(constraint.apply(u))
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            raise ValueError("operator appears to be zero")
        sigma_new = np.sqrt(nw)  # |A'A u| -> sigma^2 for unit u
        u = w / nw
        if abs(sigma_new - sigma) <= tol * sigma_new:
            return float(sigma_new)
        sigma = sigma_new
    raise NormEstimateError(
        f"power iteration did not settle within {max_iter} sweeps", float(sigma))


def solve_reference_saddle(problem):
    """Reference saddle point for quadratic unconstrained-set instances.

    Solves the dense KKT system ``[Q A'; A 0] (x, lam) = (-c, b)`` and checks
    the result to 1e-10. Only quadratic ``h`` with ``g = 0`` over the whole
    space and full-row-rank dense ``A`` are supported.
    """
    if not (problem.smooth.is_quadratic and problem.is_smooth_unconstrained):
        raise NoReferenceError("no closed-form reference for this problem")
    try:
        amat = problem.constraint.matrix()
    except UnsupportedOracleError as exc:
        raise NoReferenceError("reference solve needs a dense constraint") from exc
    n, m = problem.constraint.cols, problem.constraint.rows
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = problem.smooth.hessian_matrix()
    kkt[:n, n:] = amat.T
    kkt[n:, :n] = amat
    rhs = np.concatenate([-problem.smooth.linear_term(), problem.constraint.rhs])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise NoReferenceError(f"singular KKT system: {exc}") from exc
    x_star, lam_star = sol[:n], sol[n:]
    feas, stat = kkt_residual(problem, x_star, lam_star)
    if feas > 1e-10 or stat > 1e-10:
        raise NoReferenceError(
            f"reference KKT residual too large: feas={feas:.2e} stat={stat:.2e}")
    return SaddlePoint(x_star, lam_star, problem.objective(x_star))


# ---------------------------------------------------------------------------
# problem files
#
# Whitespace-separated text (line breaks are not significant):
#   n m beta
#   m*n entries of A, row major
#   m entries of b
#   one objective descriptor:
#     quadratic d_1 ... d_n          h = x' diag(d) x / 2,      g = 0
#     lasso t                        h = |x|^2 / 2,             g = t |x|_1
#     logistic delta p  then p rows of (t_1 ... t_n label)      g = 0
# ---------------------------------------------------------------------------

def load_problem(path):
    """Parse a problem file into a :class:`ProblemInstance`."""
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    if len(tokens) < 3:
        raise ValueError(f"{path}: truncated header")
    pos = 0

    def take(count):
        nonlocal pos
        if pos + count > len(tokens):
            raise ValueError(f"{path}: unexpected end of file")
        out = tokens[pos:pos + count]
        pos += count
        return out

    n, m = int(take(1)[0]), int(take(1)[0])
    beta = float(take(1)[0])
    amat = np.array([float(t) for t in take(m * n)], dtype=float).reshape(m, n)
    rhs = np.array([float(t) for t in take(m)], dtype=float)
    kind = take(1)[0]
    if kind == "quadratic":
        diag = np.array([float(t) for t in take(n)], dtype=float)
        smooth, nonsmooth = QuadraticObjective(diag), ZeroProx(RealSpace())
    elif kind == "lasso":
        weight = float(take(1)[0])
        smooth = QuadraticObjective(np.ones(n))
        nonsmooth = L1Prox(weight)
    elif kind == "logistic":
        delta = float(take(1)[0])
        rows = int(take(1)[0])
        data = np.array([float(t) for t in take(rows * (n + 1))], dtype=float)
        data = data.reshape(rows, n + 1)
        smooth = LogisticObjective(data[:, :n], data[:, n], ridge=delta)
        nonsmooth = ZeroProx(RealSpace())
    else:
        raise ValueError(f"{path}: unknown objective descriptor {kind!r}")
    if pos != len(tokens):
        raise ValueError(f"{path}: {len(tokens) - pos} trailing tokens")
    return ProblemInstance(smooth, nonsmooth, MatrixConstraint(amat, rhs), beta=beta)


def save_problem(problem, path):
    """Write a :class:`ProblemInstance` in the problem-file format."""
    amat = problem.constraint.matrix()
    m, n = amat.shape
    parts = [f"{n} {m} {problem.beta:.17g}"]
    parts.extend(" ".join(f"{v:.17g}" for v in row) for row in amat)
    parts.append(" ".join(f"{v:.17g}" for v in problem.constraint.rhs))
    smooth, nonsmooth = problem.smooth, problem.nonsmooth
    if isinstance(nonsmooth, L1Prox) and nonsmooth.feasible_set.is_whole_space:
        parts.append(f"lasso {nonsmooth.weight:.17g}")
    elif isinstance(smooth, LogisticObjective):
        parts.append(f"logistic {smooth.ridge:.17g} {smooth.features.shape[0]}")
        for row, label in zip(smooth.features, smooth.labels):
            parts.append(" ".join(f"{v:.17g}" for v in row) + f" {label:.17g}")
    elif isinstance(smooth, QuadraticObjective) and smooth.diag is not None:
        parts.append("quadratic " + " ".join(f"{v:.17g}" for v in smooth.diag))
    else:
        raise ValueError("problem has no file representation")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
