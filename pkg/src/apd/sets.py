"""Simple closed convex sets with exact projections and support functions."""

from __future__ import annotations

import numpy as np

# Indicator-type support functions get evaluated at points produced by Moreau
# decomposition, which land in their domain up to roundoff; this slack absorbs
# that noise while still rejecting genuinely infeasible arguments.
_FEAS_SLACK = 1e-7


class ConvexSet:
    """A simple closed convex set, described by its Euclidean projection."""

    def project(self, x):
        raise NotImplementedError

    def contains(self, x, tol=1e-10):
        x = np.asarray(x, dtype=float)
        return bool(np.linalg.norm(self.project(x) - x) <= tol * (1.0 + np.linalg.norm(x)))

    def support(self, y):
        """Support function ``sup { <y, x> : x in the set }``."""
        raise NotImplementedError(f"{type(self).__name__} has no closed-form support function")

    @property
    def is_whole_space(self):
        return False


class RealSpace(ConvexSet):
    """The whole space (no feasible-set restriction)."""

    def project(self, x):
        return np.asarray(x, dtype=float)

    def contains(self, x, tol=1e-10):
        return True

    def support(self, y):
        y = np.asarray(y, dtype=float)
        return 0.0 if (y.size == 0 or np.max(np.abs(y)) <= _FEAS_SLACK) else np.inf

    @property
    def is_whole_space(self):
        return True


class Box(ConvexSet):
    """Coordinate box ``{x : lower <= x <= upper}``; bounds may be +-inf."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.lower > self.upper):
            raise ValueError("box has empty coordinate range")

    def project(self, x):
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def support(self, y):
        y = np.asarray(y, dtype=float)
        val = np.where(y >= 0, self.upper * y, self.lower * y)
        # 0 * inf from an unbounded coordinate with (numerically) zero weight
        val = np.where(np.abs(y) <= _FEAS_SLACK, 0.0, val)
        return float(np.sum(val))

    def interior_mask(self, x):
        x = np.asarray(x, dtype=float)
        return (x > self.lower) & (x < self.upper)


class HalfSpace(ConvexSet):
    """Half space ``{x : <a, x> <= c}`` with a nonzero normal ``a``."""

    def __init__(self, normal, offset):
        self.normal = np.asarray(normal, dtype=float)
        self.offset = float(offset)
        self._nn = float(self.normal @ self.normal)
        if self._nn == 0.0:
            raise ValueError("half-space normal must be nonzero")

    def project(self, x):
        x = np.asarray(x, dtype=float)
        excess = self.normal @ x - self.offset
        if excess <= 0.0:
            return x
        return x - (excess / self._nn) * self.normal

    def support(self, y):
        # finite only on the ray {t * normal : t >= 0}, where it equals t * offset
        y = np.asarray(y, dtype=float)
        t = (self.normal @ y) / self._nn
        scale = np.linalg.norm(y) + 1.0
        if t < -_FEAS_SLACK * scale:
            return np.inf
        t = max(t, 0.0)
        if np.linalg.norm(y - t * self.normal) > _FEAS_SLACK * scale:
            return np.inf
        return t * self.offset
