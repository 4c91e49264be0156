"""Inner solvers: practical PCG, dual subproblems, semi-smooth Newton, and
the robust augmented solver for nearly singular consensus systems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .oracles import UnsupportedOracleError


class InnerSolveError(RuntimeError):
    """An inner solve failed; carries the last residual measure."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


# ---------------------------------------------------------------------------
# practical PCG
# ---------------------------------------------------------------------------

@dataclass
class SpdSystem:
    """SPD system ``H d = e`` with an apply-only operator and preconditioner.

    ``apply_minv`` applies the inverse preconditioner; identity when omitted.
    """

    apply: callable
    rhs: np.ndarray
    apply_minv: callable = None
    dim: int = 0

    def __post_init__(self):
        self.rhs = np.asarray(self.rhs, dtype=float)
        if self.dim == 0:
            self.dim = self.rhs.size
        if self.apply_minv is None:
            self.apply_minv = lambda r: r


@dataclass
class PcgResult:
    solution: np.ndarray
    iterations: int
    converged: bool
    delta: float
    delta0: float


def pcg_solve(system, eps, i_max, d0=None):
    """Preconditioned conjugate gradients with periodic residual refresh.

    Stops when the preconditioned residual measure ``delta = <r, M^{-1} r>``
    falls to ``eps^2`` times its initial value, refreshing the true residual
    whenever the iteration index is divisible by 50.
    """
    if not (0 < eps < 1):
        raise ValueError("pcg tolerance must lie in (0, 1)")
    d = np.zeros(system.dim) if d0 is None else np.asarray(d0, dtype=float).copy()
    r = system.rhs - system.apply(d)
    p = system.apply_minv(r)
    delta = float(r @ p)
    delta0 = delta
    i = 0
    while i < i_max and delta > eps * eps * delta0:
        q = system.apply(p)
        curvature = float(q @ p)
        if curvature <= 0:
            raise InnerSolveError("operator is not positive definite on the Krylov space",
                                  np.sqrt(max(delta, 0.0)))
        step = delta / curvature
        d = d + step * p
        if i % 50 == 0:
            r = system.rhs - system.apply(d)
        else:
            r = r - step * q
        w = system.apply_minv(r)
        delta_new = float(r @ w)
        p = w + (delta_new / delta) * p
        delta = delta_new
        i += 1
    return PcgResult(d, i, delta <= eps * eps * delta0, delta, delta0)


def jacobi_preconditioner(diagonal):
    diagonal = np.asarray(diagonal, dtype=float)
    if np.any(diagonal <= 0):
        raise ValueError("Jacobi preconditioner needs a positive diagonal")
    inv = 1.0 / diagonal
    return lambda r: inv * r if r.ndim == 1 else inv[:, None] * r


# ---------------------------------------------------------------------------
# dual subproblem of the forward-backward schemes
# ---------------------------------------------------------------------------

@dataclass
class DualMapContext:
    """Data of the dual nonlinear equation ``F(lam) = 0`` for one outer step.

    ``F(lam) = theta lam - alpha A prox_{t g}(z - t A' lam) - r`` with
    ``r = theta lam_prev - alpha b``; F is monotone and Lipschitz with
    constant ``rho = theta + alpha t |A|^2``.
    """

    theta: float
    alpha: float
    t: float
    z: np.ndarray
    constraint: object
    g: object
    r: np.ndarray = None

    def __post_init__(self):
        if min(self.theta, self.alpha, self.t) <= 0:
            raise ValueError("context scalars must be positive")
        self.z = np.asarray(self.z, dtype=float)
        if self.r is None:
            self.r = np.zeros(self.constraint.rows)

    @classmethod
    def for_step(cls, theta, alpha, t, z, constraint, g, lam_prev):
        r = theta * np.asarray(lam_prev, dtype=float) - alpha * constraint.rhs
        return cls(theta, alpha, t, z, constraint, g, r=r)

    @property
    def rho(self):
        return self.theta + self.alpha * self.t * self.constraint.op_norm ** 2

    def primal_point(self, lam):
        return self.g.prox(self.t, self.z - self.t * self.constraint.apply_adjoint(lam))


def eval_dual_map(ctx, lam):
    """The monotone dual map ``F`` at ``lam``."""
    lam = np.asarray(lam, dtype=float)
    return ctx.theta * lam - ctx.alpha * ctx.constraint.apply(ctx.primal_point(lam)) - ctx.r


def eval_dual_merit(ctx, lam):
    """Smooth merit whose gradient is the dual map.

    The Moreau envelope of the conjugate is computed from the primal prox
    through Moreau's decomposition, so only the primal prox and a conjugate
    value oracle are needed.
    """
    if not ctx.g.has_conjugate:
        raise UnsupportedOracleError("merit requires conjugate oracle")
    lam = np.asarray(lam, dtype=float)
    point = ctx.z / ctx.t - ctx.constraint.apply_adjoint(lam)
    prox_val = ctx.g.prox(ctx.t, ctx.t * point)
    conj_point = point - prox_val / ctx.t  # prox of the conjugate, by Moreau
    envelope = ctx.g.conjugate_value(conj_point) + 0.5 * ctx.t * float(
        prox_val @ prox_val) / ctx.t ** 2
    return (0.5 * ctx.theta * float(lam @ lam) - float(ctx.r @ lam)
            + ctx.alpha * envelope)


def gen_jacobian_prox(g, t, u):
    """Diagonal Clarke generalized Jacobian of ``prox_{t g}`` at ``u``."""
    return g.prox_jacobian(t, u)


def assemble_saddle_subproblem(ctx, lam_prev):
    """Dual and primal SPD reductions of the linear saddle subproblem.

    Valid when ``g = 0`` over the whole space; the caller picks the smaller
    system. Both carry Jacobi preconditioners built from the dense constraint.
    """
    amat = ctx.constraint.matrix()
    m, n = amat.shape
    lam_prev = np.asarray(lam_prev, dtype=float)
    coeff = ctx.alpha * ctx.t

    dual_rhs = ctx.theta * lam_prev + ctx.alpha * (
        ctx.constraint.apply(ctx.z) - ctx.constraint.rhs)
    dual_diag = ctx.theta + coeff * np.sum(amat * amat, axis=1)
    dual = SpdSystem(
        apply=lambda lam: ctx.theta * lam + coeff * (amat @ (amat.T @ lam)),
        rhs=dual_rhs,
        apply_minv=jacobi_preconditioner(dual_diag),
        dim=m,
    )

    primal_rhs = ctx.theta * ctx.z - ctx.t * ctx.constraint.apply_adjoint(
        ctx.theta * lam_prev - ctx.alpha * ctx.constraint.rhs)
    primal_diag = ctx.theta + coeff * np.sum(amat * amat, axis=0)
    primal = SpdSystem(
        apply=lambda v: ctx.theta * v + coeff * (amat.T @ (amat @ v)),
        rhs=primal_rhs,
        apply_minv=jacobi_preconditioner(primal_diag),
        dim=n,
    )
    return dual, primal


@dataclass
class SsnResult:
    lam: np.ndarray
    iterations: int
    converged: bool
    residual_norms: list = field(default_factory=list)
    pcg_iterations: int = 0


def ssn_solve(ctx, lam0, nu=0.25, delta=0.5, tol=1e-10, max_newton=50,
              pcg_eps=1e-12, pcg_imax=None):
    """Globalized semi-smooth Newton on the dual map ``F``.

    Each iteration solves ``(theta I + alpha t A S A') d = -F(lam)`` by PCG
    with a diagonal Clarke element ``S`` of the prox, then backtracks on the
    merit with an Armijo test.
    """
    if not (0 < nu < 0.5 and 0 < delta < 1):
        raise ValueError("line-search parameters out of range")
    lam = np.asarray(lam0, dtype=float).copy()
    m = lam.size
    pcg_imax = 20 * m + 200 if pcg_imax is None else pcg_imax
    pcg_eps = min(max(pcg_eps, 1e-13), 0.5)
    history = []
    pcg_total = 0
    residual = eval_dual_map(ctx, lam)
    rnorm = float(np.linalg.norm(residual))
    history.append(rnorm)
    for j in range(max_newton):
        if rnorm <= tol:
            return SsnResult(lam, j, True, history, pcg_total)
        u = ctx.z - ctx.t * ctx.constraint.apply_adjoint(lam)
        diag = gen_jacobian_prox(ctx.g, ctx.t, u)
        coeff = ctx.alpha * ctx.t

        def apply_h(d, diag=diag, coeff=coeff):
            atd = ctx.constraint.apply_adjoint(d)
            return ctx.theta * d + coeff * ctx.constraint.apply(diag * atd)

        try:
            amat = ctx.constraint.matrix()
            hdiag = ctx.theta + coeff * np.sum(amat * amat * diag[None, :], axis=1)
            minv = jacobi_preconditioner(np.maximum(hdiag, ctx.theta))
        except UnsupportedOracleError:
            minv = None
        system = SpdSystem(apply_h, -residual, apply_minv=minv, dim=m)
        sol = pcg_solve(system, pcg_eps, pcg_imax)
        pcg_total += sol.iterations
        direction = sol.solution
        # full steps contract the residual once the active set settles;
        # accepting them directly avoids merit-noise stalls near the solution
        full = lam + direction
        full_res = eval_dual_map(ctx, full)
        full_norm = float(np.linalg.norm(full_res))
        if full_norm <= 0.5 * rnorm:
            lam, residual, rnorm = full, full_res, full_norm
            history.append(rnorm)
            continue
        merit = eval_dual_merit(ctx, lam)
        slope = float(residual @ direction)
        step = 1.0
        for _ in range(61):
            trial = lam + step * direction
            if eval_dual_merit(ctx, trial) <= merit + nu * step * slope:
                break
            step *= delta
        else:
            raise InnerSolveError("Newton line search exceeded 60 halvings", rnorm)
        lam = lam + step * direction
        residual = eval_dual_map(ctx, lam)
        rnorm = float(np.linalg.norm(residual))
        history.append(rnorm)
    return SsnResult(lam, max_newton, rnorm <= tol, history, pcg_total)


# ---------------------------------------------------------------------------
# nearly singular consensus systems
# ---------------------------------------------------------------------------

AUGMENTED_METHODS = ("jacobi", "gs", "sgs", "pcg_jacobi", "pcg_sgs")
PLAIN_METHODS = ("jacobi", "gs", "sgs")


def _as_sparse(operator):
    if sp.issparse(operator):
        return operator.tocsr()
    return sp.csr_matrix(np.asarray(operator, dtype=float))


def _col(vec, like):
    return vec[:, None] if like.ndim == 2 else vec


@dataclass
class AugmentedSystem:
    """Bordered enlargement of ``(eps I + A) v = s`` for null space span{1}.

    The operator is ``[[eps q, eps 1'], [eps 1, eps I + A]]`` acting on a
    coarse coefficient plus the fine vector; any solution recovers
    ``v = v1 * 1 + v2``. A right-hand side with several columns means that
    many independent systems sharing the operator.
    """

    operator: sp.csr_matrix
    eps: float
    s: np.ndarray

    def __post_init__(self):
        self.operator = _as_sparse(self.operator)
        self.s = np.asarray(self.s, dtype=float)
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    def recover(self, v1, v2):
        return v1 + v2 if np.ndim(v1) == 0 else np.asarray(v1)[None, :] + v2

    def original_residual(self, v1, v2):
        # evaluated blockwise: recombining first would reintroduce the
        # eps-scale cancellation the augmentation exists to avoid
        coarse = self.eps * (v1 if v2.ndim == 1 else np.asarray(v1)[None, :])
        return self.s - coarse - self.eps * v2 - self.operator @ v2


def stationary_iteration_step(operator, eps, state, s, method):
    """One Jacobi or Gauss-Seidel sweep on the bordered system.

    ``state`` is the pair ``(v1, v2)``; Jacobi updates every block from the
    old values, Gauss-Seidel updates the coarse coefficient first and then
    the blocks in index order using already-updated neighbors.
    """
    if method not in ("jacobi", "gs"):
        raise ValueError(f"unknown stationary method {method!r}")
    operator = _as_sparse(operator)
    v1, v2 = state
    v2 = np.asarray(v2, dtype=float)
    s = np.asarray(s, dtype=float)
    q = operator.shape[0]
    diag = operator.diagonal()
    if np.any(eps + diag <= 0):
        raise ValueError("nonpositive diagonal in the bordered system")
    v1_new = (s.sum(axis=0) - eps * v2.sum(axis=0)) / (eps * q)
    if method == "jacobi":
        off = operator @ v2 - _col(diag, v2) * v2
        v2_new = (s - eps * _broadcast(v1, v2) - off) / _col(eps + diag, v2)
        return v1_new, v2_new
    v2_new = v2.copy()
    indptr, indices, data = operator.indptr, operator.indices, operator.data
    for i in range(q):
        acc = s[i] - eps * v1_new
        for ptr in range(indptr[i], indptr[i + 1]):
            j = indices[ptr]
            if j != i:
                acc = acc - data[ptr] * v2_new[j]
        v2_new[i] = acc / (eps + diag[i])
    return v1_new, v2_new


def _broadcast(v1, v2):
    return v1 if v2.ndim == 1 else np.asarray(v1)[None, :]


def _bordered_matrix(operator, eps):
    q = operator.shape[0]
    ones = np.ones((q, 1))
    top = sp.hstack([sp.csr_matrix([[eps * q]]), eps * ones.T])
    bottom = sp.hstack([eps * sp.csr_matrix(ones),
                        operator + eps * sp.identity(q, format="csr")])
    return sp.vstack([top, bottom]).tocsr()


def _sgs_preconditioner(bordered):
    # one symmetric sweep (D+L) D^{-1} (D+U), applied in factored form
    diag = bordered.diagonal()
    lower = sp.tril(bordered, 0).tocsr()
    upper = sp.triu(bordered, 0).tocsr()

    def apply_minv(r):
        y = spsolve_triangular(lower, r, lower=True)
        y = _col(diag, np.asarray(y)) * y
        return spsolve_triangular(upper, y, lower=False)

    return apply_minv


def augmented_consensus_solve(operator, eps, s, method="pcg_jacobi",
                              tol=1e-6, i_max=100000, warm=None):
    """Solve ``(eps I + A) v = s`` through the bordered augmented system.

    ``A`` must be symmetric positive semidefinite with null space span{1}.
    Every method terminates on the relative residual of the *original*
    system, which is the quantity outer solvers consume, or at ``i_max``.
    ``s`` may have several columns (independent systems sharing A).

    Returns ``(v, iterations, converged)``.
    """
    if method not in AUGMENTED_METHODS:
        raise ValueError(f"unknown method {method!r}; pick one of {AUGMENTED_METHODS}")
    system = AugmentedSystem(_as_sparse(operator), eps, s)
    s_norm = float(np.linalg.norm(system.s))
    if s_norm == 0.0:
        return np.zeros_like(system.s), 0, True
    if method in ("jacobi", "gs", "sgs"):
        return _augmented_stationary(system, method, tol, i_max, s_norm)
    return _augmented_pcg(system, method, tol, i_max, s_norm, warm)


def _converged(system, v1, v2, tol, s_norm):
    return float(np.linalg.norm(system.original_residual(v1, v2))) <= tol * s_norm


def _augmented_stationary(system, method, tol, i_max, s_norm):
    v1 = np.zeros(system.s.shape[1]) if system.s.ndim == 2 else 0.0
    v2 = np.zeros_like(system.s)
    for it in range(i_max):
        if _converged(system, v1, v2, tol, s_norm):
            return system.recover(v1, v2), it, True
        if method == "sgs":
            v1, v2 = stationary_iteration_step(system.operator, system.eps,
                                               (v1, v2), system.s, "gs")
            v1, v2 = _gs_backward(system, (v1, v2))
        else:
            v1, v2 = stationary_iteration_step(system.operator, system.eps,
                                               (v1, v2), system.s, method)
    return system.recover(v1, v2), i_max, _converged(system, v1, v2, tol, s_norm)


def _gs_backward(system, state):
    """Backward Gauss-Seidel sweep: blocks in reverse order, coarse last."""
    operator, eps, s = system.operator, system.eps, system.s
    v1, v2 = state
    v2 = np.array(v2, dtype=float)
    q = operator.shape[0]
    diag = operator.diagonal()
    indptr, indices, data = operator.indptr, operator.indices, operator.data
    for i in range(q - 1, -1, -1):
        acc = s[i] - eps * v1
        for ptr in range(indptr[i], indptr[i + 1]):
            j = indices[ptr]
            if j != i:
                acc = acc - data[ptr] * v2[j]
        v2[i] = acc / (eps + diag[i])
    v1_new = (s.sum(axis=0) - eps * v2.sum(axis=0)) / (eps * q)
    return v1_new, v2


def _augmented_pcg(system, method, tol, i_max, s_norm, warm):
    s = system.s
    bordered = _bordered_matrix(system.operator, system.eps)
    if method == "pcg_jacobi":
        minv = jacobi_preconditioner(bordered.diagonal())
    else:
        minv = _sgs_preconditioner(bordered)
    shat = np.concatenate([s.sum(axis=0, keepdims=True), s])
    d = np.zeros_like(shat)
    if warm is not None:
        d[1:] = np.asarray(warm, dtype=float)
    r = shat - bordered @ d
    p = minv(r)
    delta = _dot_cols(r, p)
    it = 0
    fresh = True
    # rows 1.. of the bordered residual equal the original-system residual
    while it < i_max:
        if float(np.linalg.norm(r[1:])) <= tol * s_norm:
            if fresh:
                break
            # recursed residual may drift; confirm before declaring victory
            r = shat - bordered @ d
            fresh = True
            if float(np.linalg.norm(r[1:])) <= tol * s_norm:
                break
            w = minv(r)
            delta = _dot_cols(r, w)
            p = w
        q = bordered @ p
        curvature = _dot_cols(q, p)
        step = _safe_ratio(delta, curvature)
        d = d + _scale_cols(step, p)
        if it % 50 == 0:
            r = shat - bordered @ d
            fresh = True
        else:
            r = r - _scale_cols(step, q)
            fresh = False
        w = minv(r)
        delta_new = _dot_cols(r, w)
        p = w + _scale_cols(_safe_ratio(delta_new, delta), p)
        delta = delta_new
        it += 1
    converged = _converged(system, d[0], d[1:], tol, s_norm)
    return system.recover(d[0], d[1:]), it, converged


def _dot_cols(a, b):
    return float(a @ b) if a.ndim == 1 else np.einsum("ij,ij->j", a, b)


def _safe_ratio(num, den):
    if np.ndim(den) == 0:
        return num / den if den > 0 else 0.0
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe, 0.0)


def _scale_cols(scale, vec):
    return scale * vec if vec.ndim == 1 else np.asarray(scale)[None, :] * vec


def plain_iteration_solve(operator, eps, s, method="jacobi", tol=1e-6, i_max=100000):
    """Classical Jacobi/GS/SGS directly on ``(eps I + A) v = s``.

    Kept for the robustness benchmark: these stall as ``eps`` shrinks, which
    is exactly the behavior the augmented solver removes.
    """
    if method not in PLAIN_METHODS:
        raise ValueError(f"unknown method {method!r}; pick one of {PLAIN_METHODS}")
    operator = _as_sparse(operator)
    s = np.asarray(s, dtype=float)
    s_norm = float(np.linalg.norm(s))
    if s_norm == 0.0:
        return np.zeros_like(s), 0, True
    q = operator.shape[0]
    diag = operator.diagonal()
    v = np.zeros_like(s)
    lower = (sp.tril(operator, 0) + eps * sp.identity(q)).tocsr()
    upper = (sp.triu(operator, 0) + eps * sp.identity(q)).tocsr()
    strict_upper = sp.triu(operator, 1).tocsr()
    strict_lower = sp.tril(operator, -1).tocsr()
    for it in range(i_max):
        res = s - (eps * v + operator @ v)
        if float(np.linalg.norm(res)) <= tol * s_norm:
            return v, it, True
        if method == "jacobi":
            off = operator @ v - _col(diag, v) * v
            v = (s - off) / _col(eps + diag, v)
        elif method == "gs":
            v = spsolve_triangular(lower, s - strict_upper @ v, lower=True)
        else:  # sgs
            v = spsolve_triangular(lower, s - strict_upper @ v, lower=True)
            v = spsolve_triangular(upper, s - strict_lower @ v, lower=False)
    res = s - (eps * v + operator @ v)
    return v, i_max, float(np.linalg.norm(res)) <= tol * s_norm
