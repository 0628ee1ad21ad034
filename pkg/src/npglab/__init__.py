"""Exact-gradient natural policy gradient on tabular MDPs, with convergence-bound certification."""
from .algorithms import (
    AdaptiveL,
    ConstantEta,
    ConstantL,
    GeometricL,
    IncreasingEta,
    LinearL,
    RunTrace,
    SoftmaxPGStep,
    TraceRecord,
    adaptive_eta,
    npg_step,
    run_npg_adaptive,
    run_npg_constant,
    run_npg_increasing,
    run_softmax_pg,
    run_terminated_npg,
    softmax_pg_gradient,
)
from .errors import (
    ConvergenceError,
    DegenerateSupportError,
    DomainError,
    NpgLabError,
    ParameterError,
    ParseError,
)
from .mdp import Mdp, Policy, bandit_mdp, random_mdp, uniform_policy, validate
from .solver import (
    evaluate_policy,
    optimality_report,
    perf_difference,
    pi_target,
    policy_iteration,
    q_values,
    solve,
    value_iteration,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
