"""Accelerated primal-dual solvers for linearly constrained convex optimization.

The package splits into problem oracles (:mod:`apd.oracles`, :mod:`apd.model`),
the scaling schedule (:mod:`apd.schedule`), the continuous flow
(:mod:`apd.flow`), the four discrete schemes (:mod:`apd.solvers`), inner
solvers (:mod:`apd.inner`), decentralized consensus optimization
(:mod:`apd.ddo`), and the experiment harness (:mod:`apd.harness`).
"""

from .model import (
    MatrixConstraint,
    NoReferenceError,
    ProblemInstance,
    SaddlePoint,
    evaluate_augmented_lagrangian,
    kkt_residual,
    load_problem,
    operator_norm_estimate,
    prox_over_set,
    save_problem,
    solve_reference_saddle,
)
from .oracles import (
    L1Prox,
    LeastSquaresObjective,
    LogisticObjective,
    ProxFunction,
    QuadraticObjective,
    QuadraticProx,
    SmoothOracle,
    ZeroObjective,
    ZeroProx,
    soft_threshold,
)
from .schedule import ScalingState, StepRule, advance_scaling, step_size, theta_upper_bound
from .sets import Box, HalfSpace, RealSpace
from .solvers import (
    InnerConfig,
    IterateState,
    IterationRecord,
    SolverConfig,
    discrete_lyapunov,
    ex_apdfb_step,
    implicit_apd_step,
    residual_metrics,
    run_solver,
    semi_apd_step,
    semi_apdfb_step,
)

__all__ = [
    "Box",
    "HalfSpace",
    "InnerConfig",
    "IterateState",
    "IterationRecord",
    "L1Prox",
    "LeastSquaresObjective",
    "LogisticObjective",
    "MatrixConstraint",
    "NoReferenceError",
    "ProblemInstance",
    "ProxFunction",
    "QuadraticObjective",
    "QuadraticProx",
    "RealSpace",
    "SaddlePoint",
    "ScalingState",
    "SmoothOracle",
    "SolverConfig",
    "StepRule",
    "ZeroObjective",
    "ZeroProx",
    "advance_scaling",
    "discrete_lyapunov",
    "evaluate_augmented_lagrangian",
    "ex_apdfb_step",
    "implicit_apd_step",
    "kkt_residual",
    "load_problem",
    "operator_norm_estimate",
    "prox_over_set",
    "residual_metrics",
    "run_solver",
    "save_problem",
    "semi_apd_step",
    "semi_apdfb_step",
    "soft_threshold",
    "solve_reference_saddle",
    "step_size",
    "theta_upper_bound",
]

__version__ = "0.1.0"
