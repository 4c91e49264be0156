"""Objective oracles: smooth parts with gradients, nonsmooth parts with proxes.

A problem objective is split as ``f = h + g`` where ``h`` is smooth (value and
gradient, with strong-convexity modulus ``mu`` and gradient Lipschitz constant
``lip``) and ``g`` is a prox-friendly function carrying the feasible set, so
that ``g.prox`` is the proximal operator of ``g`` restricted to the set.
"""

from __future__ import annotations

import numpy as np

from .sets import Box, ConvexSet, RealSpace


class UnsupportedOracleError(RuntimeError):
    """An oracle was asked for an operation it does not provide."""


# ---------------------------------------------------------------------------
# smooth oracles
# ---------------------------------------------------------------------------

class SmoothOracle:
    """Convex smooth function with ``mu``-strong convexity and ``lip`` gradient."""

    mu = 0.0
    lip = 0.0
    dim = 0

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian_matrix(self):
        """Dense Hessian for quadratic oracles; raises otherwise."""
        raise UnsupportedOracleError(f"{type(self).__name__} is not quadratic")

    def linear_term(self):
        raise UnsupportedOracleError(f"{type(self).__name__} is not quadratic")

    @property
    def is_quadratic(self):
        return False

    @property
    def is_zero(self):
        return False


class ZeroObjective(SmoothOracle):
    def __init__(self, dim):
        self.dim = int(dim)

    def value(self, x):
        return 0.0

    def gradient(self, x):
        return np.zeros(self.dim)

    def hessian_matrix(self):
        return np.zeros((self.dim, self.dim))

    def linear_term(self):
        return np.zeros(self.dim)

    @property
    def is_quadratic(self):
        return True

    @property
    def is_zero(self):
        return True


def _snap_nonnegative(value, scale):
    # eigenvalue noise below ~1e-12*scale means "zero" for rate purposes
    return 0.0 if value <= 1e-12 * max(scale, 1.0) else float(value)


class QuadraticObjective(SmoothOracle):
    """``h(x) = x'Qx/2 + c'x`` with ``Q`` given dense or as a diagonal vector."""

    def __init__(self, quad, linear=None, mu=None, lip=None):
        quad = np.asarray(quad, dtype=float)
        if quad.ndim == 1:
            self.diag = quad
            self.dense = None
            self.dim = quad.size
            lo, hi = float(quad.min()), float(quad.max())
        else:
            if quad.shape[0] != quad.shape[1]:
                raise ValueError("quadratic term must be square")
            self.diag = None
            self.dense = 0.5 * (quad + quad.T)
            self.dim = quad.shape[0]
            eig = np.linalg.eigvalsh(self.dense)
            lo, hi = float(eig[0]), float(eig[-1])
        if lo < -1e-10 * max(abs(hi), 1.0):
            raise ValueError("quadratic term must be positive semidefinite")
        self.linear = np.zeros(self.dim) if linear is None else np.asarray(linear, dtype=float)
        self.mu = _snap_nonnegative(lo, hi) if mu is None else float(mu)
        self.lip = max(hi, 0.0) if lip is None else float(lip)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.diag is not None:
            return 0.5 * float(x @ (self.diag * x)) + float(self.linear @ x)
        return 0.5 * float(x @ (self.dense @ x)) + float(self.linear @ x)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self.diag is not None:
            return self.diag * x + self.linear
        return self.dense @ x + self.linear

    def hessian_matrix(self):
        return np.diag(self.diag) if self.diag is not None else self.dense

    def linear_term(self):
        return self.linear

    @property
    def is_quadratic(self):
        return True

    @property
    def is_diagonal(self):
        return self.diag is not None


class LeastSquaresObjective(QuadraticObjective):
    """``h(x) = |Bx - d|^2 / 2 + ridge |x|^2 / 2`` as an explicit quadratic."""

    def __init__(self, design, target, ridge=0.0):
        design = np.asarray(design, dtype=float)
        target = np.asarray(target, dtype=float)
        quad = design.T @ design + ridge * np.eye(design.shape[1])
        super().__init__(quad, linear=-design.T @ target)
        self.design = design
        self.target = target
        self.offset = 0.5 * float(target @ target)

    def value(self, x):
        return super().value(x) + self.offset


class LogisticObjective(SmoothOracle):
    """Binary logistic loss ``sum_j ln(1 + exp(-b_j <t_j, x>)) + ridge |x|^2 / 2``."""

    def __init__(self, features, labels, ridge=0.0):
        self.features = np.asarray(features, dtype=float)
        self.labels = np.asarray(labels, dtype=float)
        if set(np.unique(self.labels)) - {-1.0, 1.0}:
            raise ValueError("labels must be +-1")
        self.ridge = float(ridge)
        self.dim = self.features.shape[1]
        self.mu = self.ridge
        # hessian <= ridge I + T' diag(1/4) T
        self.lip = self.ridge + 0.25 * np.linalg.norm(self.features, 2) ** 2

    def value(self, x):
        margins = self.labels * (self.features @ np.asarray(x, dtype=float))
        return float(np.sum(np.logaddexp(0.0, -margins))) + 0.5 * self.ridge * float(x @ x)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        margins = self.labels * (self.features @ x)
        weights = -self.labels / (1.0 + np.exp(margins))
        return self.features.T @ weights + self.ridge * x


# ---------------------------------------------------------------------------
# prox library
# ---------------------------------------------------------------------------

def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


class ProxFunction:
    """Nonsmooth part ``g`` plus the indicator of its feasible set.

    ``prox(eta, x)`` returns ``argmin_{y in set} g(y) + |y - x|^2 / (2 eta)``
    in closed form. ``value`` includes the set indicator (``inf`` outside).
    """

    feasible_set: ConvexSet = RealSpace()

    def value(self, x):
        raise NotImplementedError

    def prox(self, eta, x):
        raise NotImplementedError

    def conjugate_value(self, y):
        """Conjugate of ``g + indicator(set)``; optional oracle."""
        raise UnsupportedOracleError(f"{type(self).__name__} has no conjugate oracle")

    def conjugate_prox(self, eta, y):
        """Independent closed form of ``prox_{(g+ind)^*/eta}``; optional."""
        raise UnsupportedOracleError(f"{type(self).__name__} has no conjugate prox")

    def prox_jacobian(self, eta, u):
        """Diagonal of one Clarke generalized Jacobian of ``prox(eta, .)`` at u."""
        raise UnsupportedOracleError(
            f"{type(self).__name__} has no separable prox Jacobian")

    @property
    def has_conjugate(self):
        return True

    @property
    def is_zero_over_whole_space(self):
        return False


class ZeroProx(ProxFunction):
    """``g = 0`` over a feasible set: the prox is the set projection."""

    def __init__(self, feasible_set=None):
        self.feasible_set = feasible_set if feasible_set is not None else RealSpace()

    def value(self, x):
        return 0.0 if self.feasible_set.contains(x) else np.inf

    def prox(self, eta, x):
        return self.feasible_set.project(np.asarray(x, dtype=float))

    def conjugate_value(self, y):
        return self.feasible_set.support(y)

    def conjugate_prox(self, eta, y):
        if self.feasible_set.is_whole_space:
            # conjugate is the indicator of {0}
            return np.zeros_like(np.asarray(y, dtype=float))
        raise UnsupportedOracleError("conjugate prox only for the whole space")

    def prox_jacobian(self, eta, u):
        u = np.asarray(u, dtype=float)
        if self.feasible_set.is_whole_space:
            return np.ones_like(u)
        if isinstance(self.feasible_set, Box):
            # boundary points take 0: a valid Clarke element, fixed for determinism
            return self.feasible_set.interior_mask(u).astype(float)
        raise UnsupportedOracleError("projection Jacobian is not separable for this set")

    @property
    def is_zero_over_whole_space(self):
        return self.feasible_set.is_whole_space


class L1Prox(ProxFunction):
    """``g(x) = weight * |x|_1`` over the whole space or a box."""

    def __init__(self, weight=1.0, feasible_set=None):
        if weight < 0:
            raise ValueError("l1 weight must be nonnegative")
        self.weight = float(weight)
        self.feasible_set = feasible_set if feasible_set is not None else RealSpace()
        if not isinstance(self.feasible_set, (RealSpace, Box)):
            raise ValueError("l1 prox supports the whole space or a box")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if not self.feasible_set.contains(x):
            return np.inf
        return self.weight * float(np.sum(np.abs(x)))

    def prox(self, eta, x):
        shrunk = soft_threshold(np.asarray(x, dtype=float), eta * self.weight)
        return self.feasible_set.project(shrunk)

    def conjugate_value(self, y):
        if not self.feasible_set.is_whole_space:
            raise UnsupportedOracleError("l1 conjugate only over the whole space")
        y = np.asarray(y, dtype=float)
        bound = self.weight + _conj_slack(self.weight)
        return 0.0 if np.all(np.abs(y) <= bound) else np.inf

    def conjugate_prox(self, eta, y):
        if not self.feasible_set.is_whole_space:
            raise UnsupportedOracleError("l1 conjugate prox only over the whole space")
        return np.clip(np.asarray(y, dtype=float), -self.weight, self.weight)

    def prox_jacobian(self, eta, u):
        u = np.asarray(u, dtype=float)
        active = np.abs(u) > eta * self.weight  # ties resolve to 0
        if isinstance(self.feasible_set, Box):
            shrunk = soft_threshold(u, eta * self.weight)
            active &= self.feasible_set.interior_mask(shrunk)
        return active.astype(float)


class QuadraticProx(ProxFunction):
    """Separable quadratic ``g(x) = sum_i q_i x_i^2 / 2`` over the space or a box."""

    def __init__(self, diag, feasible_set=None):
        self.diag = np.asarray(diag, dtype=float)
        if np.any(self.diag < 0):
            raise ValueError("quadratic prox needs nonnegative curvature")
        self.feasible_set = feasible_set if feasible_set is not None else RealSpace()
        if not isinstance(self.feasible_set, (RealSpace, Box)):
            raise ValueError("quadratic prox supports the whole space or a box")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if not self.feasible_set.contains(x):
            return np.inf
        return 0.5 * float(x @ (self.diag * x))

    def prox(self, eta, x):
        free = np.asarray(x, dtype=float) / (1.0 + eta * self.diag)
        return self.feasible_set.project(free)

    def prox_jacobian(self, eta, u):
        u = np.asarray(u, dtype=float)
        slope = 1.0 / (1.0 + eta * self.diag)
        if isinstance(self.feasible_set, Box):
            inside = self.feasible_set.interior_mask(u * slope)
            slope = np.where(inside, slope, 0.0)
        return slope * np.ones_like(u)

    @property
    def has_conjugate(self):
        return False


def _conj_slack(scale):
    return 1e-7 * (1.0 + scale)
