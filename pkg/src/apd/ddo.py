"""Decentralized consensus optimization on graphs: the primal-dual scheme
with the augmented inner solver, plus the Extra and AQP baselines."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .inner import InnerSolveError, augmented_consensus_solve
from .model import operator_norm_estimate


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph given by an edge list over ``0..n-1``."""

    n: int
    edges: tuple

    def __post_init__(self):
        seen = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError("self-loops are not allowed")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError("edge endpoint out of range")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError("duplicate edge")
            seen.add(key)

    @property
    def degrees(self):
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def is_connected(self):
        if self.n == 0:
            return False
        adj = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.n


def path_graph(n):
    return Graph(n, tuple((i, i + 1) for i in range(n - 1)))


def cycle_graph(n):
    if n < 3:
        raise ValueError("a cycle needs at least 3 nodes")
    return Graph(n, tuple((i, (i + 1) % n) for i in range(n)))


def grid_graph(rows, cols):
    edges = []
    for r in range(rows):
        for c in range(cols):
            node = r * cols + c
            if c + 1 < cols:
                edges.append((node, node + 1))
            if r + 1 < rows:
                edges.append((node, node + cols))
    return Graph(rows * cols, tuple(edges))


def random_geometric_graph(n, radius, seed, max_tries=200):
    """Random geometric graph on the unit square, retried until connected."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        points = rng.random((n, 2))
        diff = points[:, None, :] - points[None, :, :]
        close = np.einsum("ijk,ijk->ij", diff, diff) <= radius * radius
        edges = tuple((i, j) for i in range(n) for j in range(i + 1, n) if close[i, j])
        graph = Graph(n, edges)
        if graph.is_connected():
            return graph
    raise ValueError(f"no connected geometric graph after {max_tries} draws; "
                     "increase the radius")


def graph_laplacian(graph):
    """Sparse combinatorial Laplacian; requires a connected graph."""
    if not graph.is_connected():
        raise ValueError("graph must be connected")
    rows, cols, vals = [], [], []
    for i, j in graph.edges:
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-1.0, -1.0, 1.0, 1.0]
    return sp.csr_matrix((vals, (rows, cols)), shape=(graph.n, graph.n))


def laplacian_max_eigenvalue(laplacian, tol=1e-10, seed=0):
    """Largest Laplacian eigenvalue by power iteration (symmetric PSD)."""

    class _SymmetricOp:
        rows = laplacian.shape[0]
        cols = laplacian.shape[1]

        @staticmethod
        def apply(x):
            return laplacian @ x

        @staticmethod
        def apply_adjoint(x):
            return laplacian @ x

    return operator_norm_estimate(_SymmetricOp, tol=tol, max_iter=10000, seed=seed)


@dataclass(frozen=True)
class MixingMatrix:
    w: np.ndarray
    w_hat: np.ndarray
    lam_min_w_hat: float


def mixing_matrix(graph):
    """Doubly stochastic ``W = I - L / lambda_max(L)`` and ``(I + W) / 2``.

    The spectrum of ``W`` sits in ``[0, 1]`` with a simple eigenvalue 1, so
    the halved matrix is bounded below by one half exactly.
    """
    lap = graph_laplacian(graph).toarray()
    if graph.n == 1:
        return MixingMatrix(np.ones((1, 1)), np.ones((1, 1)), 1.0)
    top = laplacian_max_eigenvalue(sp.csr_matrix(lap))
    w = np.eye(graph.n) - lap / top
    return MixingMatrix(w, 0.5 * (np.eye(graph.n) + w), 0.5)


# ---------------------------------------------------------------------------
# problems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DdoProblem:
    """Average-of-local-objectives problem over a graph.

    Iterates are ``(n, m)`` arrays, one row per node; the consensus operator
    is the Laplacian applied row-blockwise, and its square root is never
    formed. ``mu``/``lip`` are the global constants of the averaged
    objective.
    """

    graph: Graph
    block_size: int
    kind: str  # least_squares | logistic
    local_data: tuple
    mu: float
    lip: float
    laplacian: sp.csr_matrix = field(repr=False, default=None)

    @property
    def n_nodes(self):
        return self.graph.n

    def local_value(self, i, x):
        data = self.local_data[i]
        if self.kind == "least_squares":
            design, target = data
            res = design @ x - target
            return 0.5 * float(res @ res)
        features, label, ridge = data
        margin = label * float(features @ x)
        return float(np.logaddexp(0.0, -margin)) + 0.5 * ridge * float(x @ x)

    def local_gradient(self, i, x):
        data = self.local_data[i]
        if self.kind == "least_squares":
            design, target = data
            return design.T @ (design @ x - target)
        features, label, ridge = data
        margin = label * float(features @ x)
        return -label * features / (1.0 + np.exp(margin)) + ridge * x

    def value(self, stacked):
        return sum(self.local_value(i, stacked[i]) for i in range(self.n_nodes)) \
            / self.n_nodes

    def gradient(self, stacked):
        grad = np.empty_like(stacked)
        for i in range(self.n_nodes):
            grad[i] = self.local_gradient(i, stacked[i])
        return grad / self.n_nodes

    def consensus_apply(self, stacked):
        return self.laplacian @ stacked

    def consensus_residual(self, stacked):
        return float(np.linalg.norm(self.consensus_apply(stacked)))


def build_ddo_problem(graph, block_size, kind, seed, samples=5, ridge=0.5):
    """Generate a decentralized least-squares or logistic instance.

    Least squares draws a ``samples x block_size`` design per node (no
    strong convexity); logistic draws one unit-scale feature vector and a
    binary label per node, with ``mu_i = ridge`` and
    ``lip_i = ridge + |label|^2 |features|^2 / 4``.
    """
    rng = np.random.default_rng(seed)
    lap = graph_laplacian(graph)
    if kind == "least_squares":
        data, lips = [], []
        for _ in range(graph.n):
            design = rng.standard_normal((samples, block_size)) / np.sqrt(block_size)
            target = rng.standard_normal(samples)
            data.append((design, target))
            lips.append(np.linalg.norm(design, 2) ** 2)
        mu = 0.0
        lip = max(lips) / graph.n
    elif kind == "logistic":
        data, lips = [], []
        for _ in range(graph.n):
            features = rng.standard_normal(block_size) / np.sqrt(block_size)
            label = float(rng.choice([-1.0, 1.0]))
            data.append((features, label, ridge))
            lips.append(ridge + label ** 2 * float(features @ features) / 4.0)
        mu = ridge / graph.n
        lip = max(lips) / graph.n
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return DdoProblem(graph, block_size, kind, tuple(data), mu, lip, lap)


def reference_objective(problem, tol=1e-12, max_iter=200):
    """Optimal consensus objective by a direct centralized solve.

    Least squares reduces to the stacked normal equations; logistic uses a
    damped Newton iteration on the ``block_size``-dimensional average.
    """
    m = problem.block_size
    n = problem.n_nodes
    if problem.kind == "least_squares":
        gram = np.zeros((m, m))
        rhs = np.zeros(m)
        for design, target in problem.local_data:
            gram += design.T @ design
            rhs += design.T @ target
        x = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    else:
        x = np.zeros(m)
        for _ in range(max_iter):
            grad = np.zeros(m)
            hess = np.zeros((m, m))
            for features, label, ridge in problem.local_data:
                margin = label * float(features @ x)
                sig = 1.0 / (1.0 + np.exp(margin))
                grad += -label * features * sig + ridge * x
                hess += np.outer(features, features) * sig * (1.0 - sig) \
                    + ridge * np.eye(m)
            if np.linalg.norm(grad) / n <= tol:
                break
            x = x - np.linalg.solve(hess, grad)
    stacked = np.tile(x, (n, 1))
    return problem.value(stacked), x


# ---------------------------------------------------------------------------
# algorithm states and steps
# ---------------------------------------------------------------------------

@dataclass
class ApdDdoState:
    x: np.ndarray
    v: np.ndarray
    theta: float
    gamma: float
    k: int = 0
    inner_iters: int = 0


def apd_ddo_step(state, problem, inner_tol_floor=1e-12, i_max=100000):
    """One step of the primal-dual scheme specialized to consensus problems.

    The multiplier is eliminated through the conserved relation against the
    square-root constraint, so the update only applies the Laplacian: the
    momentum solve is the nearly singular system ``(eps_k I + A) v = s_k``
    handled by the augmented solver with PCG-Jacobi at tolerance
    ``|A x_k| / 10``.
    """
    mu, lip = problem.mu, problem.lip
    alpha = np.sqrt(state.gamma / lip)
    tau = state.gamma + mu * alpha
    y = (state.x + alpha * state.v) / (1.0 + alpha)
    w = (state.gamma * state.v + mu * alpha * y) / tau
    z = w - (alpha / tau) * problem.gradient(y)
    eps_k = tau * state.theta / alpha ** 2
    ax = problem.consensus_apply(state.x)
    s = eps_k * z - ax / alpha
    tol = max(float(np.linalg.norm(ax)) / 10.0, inner_tol_floor)
    tol = min(tol, 0.5)
    v_next, iters, converged = augmented_consensus_solve(
        problem.laplacian, eps_k, s, method="pcg_jacobi", tol=tol, i_max=i_max,
        warm=state.v)
    if not converged:
        # near the floating-point floor the solver can stall a hair above a
        # tight target; a bounded slack keeps legitimate long runs alive
        residual = float(np.linalg.norm(
            s - (eps_k * v_next + problem.consensus_apply(v_next))))
        if residual > 10.0 * tol * float(np.linalg.norm(s)):
            raise InnerSolveError("augmented consensus solve did not converge",
                                  residual)
    x_next = (state.x + alpha * v_next) / (1.0 + alpha)
    return ApdDdoState(
        x=x_next, v=v_next,
        theta=state.theta / (1.0 + alpha),
        gamma=(state.gamma + mu * alpha) / (1.0 + alpha),
        k=state.k + 1, inner_iters=iters)


@dataclass
class ExtraState:
    x: np.ndarray
    x_prev: np.ndarray = None
    grad_prev: np.ndarray = None
    k: int = 0


def extra_step(state, problem, mixing, alpha):
    """One Extra update; the first call performs the initialization step."""
    w, w_hat = mixing.w, mixing.w_hat
    grad = problem.gradient(state.x)
    if state.k == 0:
        x_next = w @ state.x - alpha * grad
        return ExtraState(x=x_next, x_prev=state.x, grad_prev=grad, k=1)
    correction = state.x - w_hat @ state.x_prev + alpha * state.grad_prev
    x_next = w @ state.x - alpha * grad + correction
    return ExtraState(x=x_next, x_prev=state.x, grad_prev=grad, k=state.k + 1)


def extra_step_size(problem, mixing, strongly_convex=False):
    if strongly_convex:
        return problem.mu * mixing.lam_min_w_hat / problem.lip ** 2
    return mixing.lam_min_w_hat / problem.lip


@dataclass
class AqpState:
    x: np.ndarray
    x_prev: np.ndarray
    k: int = 1
    theta_prev: float = 1.0


def aqp_penalty_operator(mixing):
    """Consensus penalty ``(I - W) / 2`` used by both quadratic-penalty variants."""
    return 0.5 * (np.eye(mixing.w.shape[0]) - mixing.w)


def aqp_step(state, problem, penalty, variant="convex"):
    """One accelerated-quadratic-penalty update.

    The convex variant uses the growing penalty ``(k+1)`` and momentum
    ``(k-1)/(k+1)``; the strongly convex variant runs the decreasing-theta
    recursion ``theta^2 + theta_prev^2 theta = theta_prev^2``.
    """
    k = state.k
    if variant == "convex":
        momentum = (k - 1.0) / (k + 1.0)
        y = state.x + momentum * (state.x - state.x_prev)
        grad = problem.gradient(y) + (k + 1.0) * (penalty @ y)
        x_next = y - grad / (problem.lip + k + 1.0)
        return AqpState(x=x_next, x_prev=state.x, k=k + 1,
                        theta_prev=state.theta_prev)
    if variant != "strongly_convex":
        raise ValueError(f"unknown aqp variant {variant!r}")
    mu, lip = problem.mu, problem.lip
    tp = state.theta_prev
    theta = 0.5 * tp * (np.sqrt(tp * tp + 4.0) - tp)  # theta^2 + tp^2 theta = tp^2
    eta = lip * theta ** 2 + mu
    momentum = (eta * theta - mu * theta ** 2) * (1.0 - tp) / ((eta - mu * theta ** 2) * tp)
    y = state.x + momentum * (state.x - state.x_prev)
    x_next = y - (theta ** 2 * problem.gradient(y) + mu * (penalty @ y)) / eta
    return AqpState(x=x_next, x_prev=state.x, k=k + 1, theta_prev=theta)


# ---------------------------------------------------------------------------
# run loop
# ---------------------------------------------------------------------------

@dataclass
class DdoRecord:
    k: int
    obj_gap: float
    consensus_residual: float
    inner_iters: int
    wall_ns: int


@dataclass
class DdoRun:
    records: list
    status: str
    f_ref: float


def run_ddo(problem, algo, max_iter, stop_tol=0.0, gamma0=None, f_ref=None,
            timing=False, seed=0):
    """Run one decentralized algorithm and record per-iteration diagnostics.

    ``algo`` is one of ``apd``, ``extra``, ``aqp``; the quadratic-penalty
    and Extra step sizes switch automatically on ``mu > 0``. The objective
    gap is measured against a direct centralized solve (``f_ref``).
    """
    if f_ref is None:
        f_ref, _ = reference_objective(problem)
    n, m = problem.n_nodes, problem.block_size
    x0 = np.zeros((n, m))
    mixing = mixing_matrix(problem.graph) if algo in ("extra", "aqp") else None
    if algo == "apd":
        state = ApdDdoState(x=x0, v=x0.copy(), theta=1.0,
                            gamma=gamma0 if gamma0 else problem.lip)
    elif algo == "extra":
        state = ExtraState(x=x0)
        alpha = extra_step_size(problem, mixing, strongly_convex=problem.mu > 0)
    elif algo == "aqp":
        state = AqpState(x=x0, x_prev=x0.copy())
        penalty = aqp_penalty_operator(mixing)
        variant = "strongly_convex" if problem.mu > 0 else "convex"
    else:
        raise ValueError(f"unknown algorithm {algo!r}")

    def snapshot(k, inner, wall):
        return DdoRecord(k=k, obj_gap=abs(problem.value(state.x) - f_ref),
                         consensus_residual=problem.consensus_residual(state.x),
                         inner_iters=inner, wall_ns=wall)

    records = [snapshot(0, 0, 0)]
    status = "max_iter"
    for k in range(max_iter):
        started = time.perf_counter_ns() if timing else 0
        if algo == "apd":
            try:
                state = apd_ddo_step(state, problem)
            except InnerSolveError:
                status = "inner_limit"  # inner solves hit the precision floor
                break
            inner = state.inner_iters
        elif algo == "extra":
            state = extra_step(state, problem, mixing, alpha)
            inner = 0
        else:
            state = aqp_step(state, problem, penalty, variant)
            inner = 0
        wall = time.perf_counter_ns() - started if timing else 0
        records.append(snapshot(k + 1, inner, wall))
        rec = records[-1]
        if stop_tol > 0 and rec.obj_gap + rec.consensus_residual <= stop_tol:
            status = "converged"
            break
    return DdoRun(records, status, f_ref)
