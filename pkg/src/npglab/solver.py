"""Exact dynamic programming on tabular MDPs.

Value, Q, advantage and visitation quantities are computed by dense linear solves
(LU with partial pivoting plus one step of iterative refinement). Value iteration
provides V*, Q* and the instance gap used by the bounds module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, DegenerateSupportError, ParameterError
from .mdp import Mdp, Policy, check_policy, check_rho, deterministic_policy, uniform_policy

DEFAULT_TIE_TOL = 1e-9
DEFAULT_VI_TOL = 1e-12


def policy_matrices(mdp: Mdp, policy: Policy):
    """Return ``(P_pi, r_pi)``: state transition matrix and expected reward under ``policy``."""
    check_policy(policy, mdp)
    pi = policy.probs
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    r_pi = np.einsum("sa,sa->s", pi, mdp.reward)
    return P_pi, r_pi


def _solve_refined(M, b, trans=0):
    lu = linalg.lu_factor(M, check_finite=False)
    x = linalg.lu_solve(lu, b, trans=trans, check_finite=False)
    resid = b - (M.T @ x if trans else M @ x)
    return x + linalg.lu_solve(lu, resid, trans=trans, check_finite=False)


def _resolvent_system(mdp, policy):
    P_pi, r_pi = policy_matrices(mdp, policy)
    return np.eye(mdp.n_states) - mdp.discount * P_pi, r_pi


def evaluate_policy(mdp: Mdp, policy: Policy) -> np.ndarray:
    """V^pi as the solution of (I - gamma P_pi) V = r_pi."""
    M, r_pi = _resolvent_system(mdp, policy)
    v = _solve_refined(M, r_pi)
    if not np.all(np.isfinite(v)):
        raise RuntimeError("policy evaluation produced non-finite values")
    return v


def q_from_value(mdp: Mdp, value) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if value.shape != (mdp.n_states,):
        raise ParameterError(f"value must have shape ({mdp.n_states},), got {value.shape}")
    return mdp.reward + mdp.discount * (mdp.transition @ value)


q_from_policy = q_from_value  # Q^pi from V^pi; the policy enters only through its value


def q_values(mdp: Mdp, policy: Policy):
    """Convenience: ``(V^pi, Q^pi)``."""
    v = evaluate_policy(mdp, policy)
    return v, q_from_value(mdp, v)


def advantage(q, v) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if q.ndim != 2 or v.shape != (q.shape[0],):
        raise ParameterError(f"advantage needs Q of shape (S, A) and V of shape (S,), got {q.shape}, {v.shape}")
    return q - v[:, None]


def discounted_visitation(mdp: Mdp, policy: Policy, rho) -> np.ndarray:
    """d_rho^pi = (1 - gamma) rho^T (I - gamma P_pi)^{-1}, via the transposed system."""
    rho = check_rho(rho, mdp.n_states)
    M, _ = _resolvent_system(mdp, policy)
    return _solve_refined(M, (1.0 - mdp.discount) * rho, trans=1)


def perf_difference(mdp: Mdp, pi1: Policy, pi2: Policy, rho) -> float:
    """Right-hand side of the performance difference identity; equals V^pi1(rho) - V^pi2(rho)."""
    d1 = discounted_visitation(mdp, pi1, rho)
    v2, q2 = q_values(mdp, pi2)
    adv2 = advantage(q2, v2)
    return float(d1 @ (pi1.probs * adv2).sum(axis=1) / (1.0 - mdp.discount))


def bellman_optimality(mdp: Mdp, v) -> np.ndarray:
    return q_from_value(mdp, v).max(axis=1)


def value_iteration(mdp: Mdp, tolerance: float = DEFAULT_VI_TOL):
    """Bellman optimality iteration from V = 0.

    Stops once ``||V - TV||_inf <= tolerance (1 - gamma) / (2 gamma)`` or the residual
    reaches floating-point noise, then polishes with an exact evaluation of the greedy
    policy when that lowers the residual. Returns ``(v_star, q_star, iterations)``.
    """
    if not tolerance > 0:
        raise ParameterError("tolerance must be positive")
    g = mdp.discount
    target = tolerance * (1.0 - g) / (2.0 * g)
    rmax = max(1.0, float(np.abs(mdp.reward).max()))
    cap = math.ceil(math.log(tolerance * (1.0 - g) / rmax) / math.log(g))
    cap += math.ceil(math.log(2.0 * g) / -math.log(g)) + 10
    v = np.zeros(mdp.n_states)
    resid = math.inf
    it = 0
    while True:
        tv = bellman_optimality(mdp, v)
        resid = float(np.abs(tv - v).max())
        floor = 16 * np.finfo(float).eps * max(1.0, float(np.abs(tv).max()))
        v = tv
        if resid <= target or resid <= floor:
            break
        it += 1
        if it > cap:
            raise ConvergenceError(f"value iteration exceeded {cap} iterations (residual {resid:.3g})")

    greedy = q_from_value(mdp, v).argmax(axis=1)
    v_pol = evaluate_policy(mdp, deterministic_policy(greedy, mdp.n_actions))
    if np.abs(bellman_optimality(mdp, v_pol) - v_pol).max() <= np.abs(bellman_optimality(mdp, v) - v).max():
        v = v_pol
    return v, q_from_value(mdp, v), it


def _argmax_mask(q, tie_tolerance):
    if tie_tolerance < 0:
        raise ParameterError("tie_tolerance must be non-negative")
    q = np.asarray(q, dtype=float)
    return q >= q.max(axis=1, keepdims=True) - tie_tolerance


def _row_gaps(q, mask):
    best = q.max(axis=1)
    rest = np.where(mask, -np.inf, q).max(axis=1)
    return best - rest  # +inf where the whole row is in the mask


def _sets(mask):
    return tuple(tuple(int(a) for a in np.flatnonzero(row)) for row in mask)


@dataclass(frozen=True, eq=False)
class OptimalityReport:
    """Optimal values, per-state optimal action sets, dummy states and the gap Delta."""

    v_star: np.ndarray
    q_star: np.ndarray
    optimal: np.ndarray          # bool (S, A): a in A*_s
    dummy_states: tuple[int, ...]
    gap_delta: float             # math.inf when every state is dummy
    tie_tolerance: float
    mdp_digest: str | None = None

    @property
    def optimal_sets(self):
        return _sets(self.optimal)

    @property
    def advantage_star(self) -> np.ndarray:
        return advantage(self.q_star, self.v_star)

    def value(self, rho) -> float:
        return float(np.asarray(rho) @ self.v_star)


def optimality_report(mdp: Mdp | None, q_star, v_star, tie_tolerance: float = DEFAULT_TIE_TOL) -> OptimalityReport:
    q_star = np.asarray(q_star, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    mask = _argmax_mask(q_star, tie_tolerance)
    dummy = np.all(mask, axis=1)
    gaps = _row_gaps(q_star, mask)
    live = gaps[~dummy]
    delta = float(live.min()) if live.size else math.inf
    for a in (mask, q_star, v_star):
        a.setflags(write=False)
    return OptimalityReport(
        v_star=v_star, q_star=q_star, optimal=mask,
        dummy_states=tuple(int(s) for s in np.flatnonzero(dummy)),
        gap_delta=delta, tie_tolerance=float(tie_tolerance),
        mdp_digest=mdp.digest if mdp is not None else None,
    )


def solve(mdp: Mdp, tie_tolerance: float = DEFAULT_TIE_TOL, tolerance: float = DEFAULT_VI_TOL) -> OptimalityReport:
    """Value iteration followed by :func:`optimality_report`."""
    v, q, _ = value_iteration(mdp, tolerance)
    return optimality_report(mdp, q, v, tie_tolerance)


@dataclass(frozen=True, eq=False)
class GreedyReport:
    greedy: np.ndarray   # bool (S, A): a in A^pi_s
    q_gap: np.ndarray    # Delta^pi(s), +inf where every action is greedy

    @property
    def greedy_sets(self):
        return _sets(self.greedy)


def greedy_report(q, tie_tolerance: float = DEFAULT_TIE_TOL) -> GreedyReport:
    q = np.asarray(q, dtype=float)
    mask = _argmax_mask(q, tie_tolerance)
    gaps = _row_gaps(q, mask)
    mask.setflags(write=False)
    gaps.setflags(write=False)
    return GreedyReport(mask, gaps)


def pi_target(policy: Policy, greedy: GreedyReport, *, on_empty: str = "raise") -> Policy:
    """Prior mass renormalised onto each state's greedy set (the infinite-step limit of NPG).

    ``on_empty="uniform"`` spreads mass uniformly over the greedy set in states where it
    carries no prior probability, instead of raising.
    """
    lp = policy.log_prob
    if greedy.greedy.shape != lp.shape:
        raise ParameterError("greedy report does not match policy shape")
    masked = np.where(greedy.greedy, lp, -np.inf)
    top = masked.max(axis=1)
    empty = np.isneginf(top)
    if empty.any():
        if on_empty != "uniform":
            s = int(np.flatnonzero(empty)[0])
            raise DegenerateSupportError(f"greedy set of state {s} carries zero probability")
        masked = np.where(empty[:, None] & greedy.greedy, 0.0, masked)
        top = masked.max(axis=1)
    lse = top + np.log(np.exp(masked - top[:, None]).sum(axis=1))
    return Policy(masked - lse[:, None])


def policy_iteration(mdp: Mdp, tie_tolerance: float = DEFAULT_TIE_TOL, max_iters: int = 1000,
                     start: Policy | None = None):
    """Policy iteration with the renormalising improvement step.

    Stops when every action played with positive probability is greedy for the policy's
    own Q (then V^pi = V*). Returns ``(policy, improvement_steps)``.
    """
    if max_iters < 1:
        raise ParameterError("max_iters must be >= 1")
    pi = start if start is not None else uniform_policy(mdp.n_states, mdp.n_actions)
    check_policy(pi, mdp)
    for it in range(max_iters + 1):
        _, q = q_values(mdp, pi)
        g = greedy_report(q, tie_tolerance)
        support = pi.log_prob > -np.inf
        if not np.any(support & ~g.greedy):
            return pi, it
        if it == max_iters:
            break
        pi = pi_target(pi, g, on_empty="uniform")
    raise ConvergenceError(f"policy iteration did not stabilise within {max_iters} steps")
