"""Natural policy gradient variants and the softmax policy-gradient baseline.

Every run starts from a given policy (uniform by default), uses exact Q-functions,
and records one :class:`TraceRecord` per iterate ``k = 0..K``. Fields that describe
the step taken *from* iterate ``k`` (``eta_used``, ``value_vector_min_increase``,
``pi_gap_tv``, ...) are ``None`` on the last record.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateSupportError, ParameterError
from .mdp import Mdp, Policy, check_policy, check_rho, uniform_policy, uniform_rho
from .solver import (
    DEFAULT_TIE_TOL,
    GreedyReport,
    OptimalityReport,
    advantage,
    discounted_visitation,
    evaluate_policy,
    greedy_report,
    pi_target,
    q_values,
    solve,
)


# --- step schedules ----------------------------------------------------------

@dataclass(frozen=True)
class ConstantEta:
    eta: float

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ParameterError(f"eta must be positive and finite, got {self.eta!r}")


@dataclass(frozen=True)
class IncreasingEta:
    """eta_k = c (k + offset); ``c=None`` means -log(gamma). ``offset=0`` is the literal schedule."""

    c: float | None = None
    offset: int = 1

    def __post_init__(self):
        if self.c is not None and not self.c > 0:
            raise ParameterError(f"c must be positive, got {self.c!r}")
        if self.offset < 0:
            raise ParameterError("offset must be non-negative")

    def eta(self, k, gamma):
        c = -math.log(gamma) if self.c is None else self.c
        return c * (k + self.offset)


@dataclass(frozen=True)
class ConstantL:
    L: float

    def __post_init__(self):
        if not self.L > 0:
            raise ParameterError(f"L must be positive, got {self.L!r}")

    def at(self, k):
        return self.L


@dataclass(frozen=True)
class LinearL:
    """L_k = L (k + offset)."""

    L: float
    offset: int = 0

    def __post_init__(self):
        if not self.L > 0:
            raise ParameterError(f"L must be positive, got {self.L!r}")
        if self.offset < 0:
            raise ParameterError("offset must be non-negative")

    def at(self, k):
        return self.L * (k + self.offset)


@dataclass(frozen=True)
class GeometricL:
    """L_k = L p^k with p in (1, 2]."""

    L: float
    p: float = 2.0

    def __post_init__(self):
        if not self.L > 0:
            raise ParameterError(f"L must be positive, got {self.L!r}")
        if not (1.0 < self.p <= 2.0):
            raise ParameterError(f"p must lie in (1, 2], got {self.p!r}")

    def at(self, k):
        return self.L * self.p ** k


LSchedule = Union[ConstantL, LinearL, GeometricL]


@dataclass(frozen=True)
class AdaptiveL:
    l_schedule: LSchedule


@dataclass(frozen=True)
class SoftmaxPGStep:
    eta: float


Schedule = Union[ConstantEta, IncreasingEta, AdaptiveL, SoftmaxPGStep]


# --- traces ------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRecord:
    k: int
    eta_used: float | None
    value_rho: float
    error: float
    scaled_error: float
    subopt_mass: float
    value_vector_min_increase: float | None = None
    pi_gap_tv: float | None = None
    pi_value_gap: float | None = None
    l_k: float | None = None


@dataclass(frozen=True, eq=False)
class RunTrace:
    algorithm: str
    schedule: Schedule | None
    records: tuple[TraceRecord, ...]
    final_policy: Policy | None
    mdp_metadata: dict
    rho: np.ndarray
    policies: tuple[Policy, ...] = field(default=())

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.records])

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value_rho for r in self.records])


# --- single steps --------------------------------------------------------------

def npg_step(policy: Policy, q, eta: float) -> Policy:
    """pi'(a|s) proportional to pi(a|s) exp(eta Q(s, a)), computed in log space.

    Q is shifted by its row maximum before scaling, so very large ``eta`` is safe.
    ``eta = 0`` is the identity update.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != policy.log_prob.shape:
        raise ParameterError(f"Q shape {q.shape} does not match policy {policy.log_prob.shape}")
    if not np.all(np.isfinite(q)):
        raise ParameterError("Q must be finite")
    if not (eta >= 0 and math.isfinite(eta)):
        raise ParameterError(f"eta must be finite and non-negative, got {eta!r}")
    z = policy.log_prob + eta * (q - q.max(axis=1, keepdims=True))
    return Policy(z - logsumexp(z, axis=1, keepdims=True))


def adaptive_eta(policy: Policy, greedy: GreedyReport, L_k: float) -> float:
    """Smallest eta with eta >= (L_k + log(|A| / pi(a|s))) / Delta^pi(s) for all greedy (s, a).

    States whose whole row is greedy (infinite gap) impose no constraint; if every
    state is like that the step is 1.0.
    """
    if not (L_k >= 0 and math.isfinite(L_k)):
        raise ParameterError(f"L_k must be finite and non-negative, got {L_k!r}")
    lp = policy.log_prob
    finite = np.isfinite(greedy.q_gap)
    if not finite.any():
        return 1.0
    greedy_lp = np.where(greedy.greedy, lp, np.inf)[finite]
    min_lp = greedy_lp.min(axis=1)
    if np.isneginf(min_lp).any():
        raise DegenerateSupportError("a greedy action has zero probability")
    need = (L_k + math.log(policy.n_actions) - min_lp) / greedy.q_gap[finite]
    return float(need.max())


def softmax_pg_gradient(mdp: Mdp, policy: Policy, rho, v=None, q=None) -> np.ndarray:
    """d V^pi(rho) / d theta for the tabular softmax parameterisation."""
    if v is None or q is None:
        v, q = q_values(mdp, policy)
    d = discounted_visitation(mdp, policy, rho)
    return d[:, None] * policy.probs * advantage(q, v) / (1.0 - mdp.discount)


def softmax_pg_eta(gamma: float, n_actions: int) -> float:
    return (1.0 - gamma) ** 3 / (2.0 * n_actions * gamma)


# --- run loops ----------------------------------------------------------------

def _subopt_mass(policy, report):
    live = np.ones(policy.n_states, dtype=bool)
    live[list(report.dummy_states)] = False
    if not live.any():
        return 0.0
    mass = np.where(report.optimal, 0.0, policy.probs).sum(axis=1)
    return float(mass[live].max())


def _run(mdp, rho, K, algorithm, schedule, step, report, init, keep_policies):
    if K < 0 or int(K) != K:
        raise ParameterError(f"K must be a non-negative integer, got {K!r}")
    rho = uniform_rho(mdp.n_states) if rho is None else check_rho(rho, mdp.n_states)
    if report is None:
        report = solve(mdp)
    elif report.mdp_digest is not None and report.mdp_digest != mdp.digest:
        raise ParameterError("optimality report was computed for a different MDP")
    v_star_rho = report.value(rho)
    pi = uniform_policy(mdp.n_states, mdp.n_actions) if init is None else check_policy(init, mdp)
    v, q = q_values(mdp, pi)
    records, policies = [], [pi]
    for k in range(K + 1):
        value = float(rho @ v)
        error = v_star_rho - value
        base = dict(k=k, value_rho=value, error=error, scaled_error=mdp.n_states * error,
                    subopt_mass=_subopt_mass(pi, report))
        if k == K:
            records.append(TraceRecord(eta_used=None, **base))
            break
        new_pi, info = step(k, pi, v, q, rho)
        v_new, q_new = q_values(mdp, new_pi)
        info = dict(info)
        target = info.pop("target", None)
        if target is not None:
            info["pi_gap_tv"] = float(np.abs(new_pi.probs - target.probs).max())
            info["pi_value_gap"] = abs(float(rho @ v_new) - float(rho @ evaluate_policy(mdp, target)))
        records.append(TraceRecord(value_vector_min_increase=float((v_new - v).min()), **base, **info))
        pi, v, q = new_pi, v_new, q_new
        if keep_policies:
            policies.append(pi)
    meta = dict(mdp.metadata())
    return RunTrace(algorithm, schedule, tuple(records), pi, meta, rho,
                    tuple(policies) if keep_policies else ())


def run_npg_constant(mdp: Mdp, eta: float, K: int, rho=None, *, report: OptimalityReport | None = None,
                     init: Policy | None = None, keep_policies=True) -> RunTrace:
    sched = ConstantEta(eta)

    def step(k, pi, v, q, rho):
        return npg_step(pi, q, sched.eta), {"eta_used": sched.eta}

    return _run(mdp, rho, K, "NPG-C", sched, step, report, init, keep_policies)


def run_npg_increasing(mdp: Mdp, schedule: IncreasingEta, K: int, rho=None, *,
                       report: OptimalityReport | None = None, init: Policy | None = None,
                       keep_policies=True) -> RunTrace:
    def step(k, pi, v, q, rho):
        eta = schedule.eta(k, mdp.discount)
        return npg_step(pi, q, eta), {"eta_used": eta}

    return _run(mdp, rho, K, "NPG-I", schedule, step, report, init, keep_policies)


def run_npg_adaptive(mdp: Mdp, l_schedule: LSchedule, K: int, rho=None, *,
                     report: OptimalityReport | None = None, init: Policy | None = None,
                     tie_tolerance: float = DEFAULT_TIE_TOL, keep_policies=True,
                     algorithm: str | None = None) -> RunTrace:
    """Adaptive step: each eta_k is the smallest value meeting the greedy-gap condition for L_k."""
    if algorithm is None:
        algorithm = {ConstantL: "NPG-A", LinearL: "NPG-AI", GeometricL: "NPG-AG"}[type(l_schedule)]

    def step(k, pi, v, q, rho):
        g = greedy_report(q, tie_tolerance)
        L_k = l_schedule.at(k)
        eta = adaptive_eta(pi, g, L_k)
        return npg_step(pi, q, eta), {"eta_used": eta, "l_k": L_k, "target": pi_target(pi, g)}

    return _run(mdp, rho, K, algorithm, AdaptiveL(l_schedule), step, report, init, keep_policies)


def run_softmax_pg(mdp: Mdp, K: int, rho=None, *, eta: float | None = None,
                   report: OptimalityReport | None = None, init: Policy | None = None,
                   keep_policies=True) -> RunTrace:
    """Gradient ascent on softmax logits with step (1 - gamma)^3 / (2 |A| gamma) by default."""
    if eta is None:
        eta = softmax_pg_eta(mdp.discount, mdp.n_actions)
    # logits are the policy's log-probabilities; ascent keeps them unnormalised
    state = {}

    def step(k, pi, v, q, rho):
        theta = state.get("theta", pi.log_prob)
        theta = theta + eta * softmax_pg_gradient(mdp, pi, rho, v, q)
        state["theta"] = theta
        return Policy(theta - logsumexp(theta, axis=1, keepdims=True)), {"eta_used": eta}

    trace = _run(mdp, rho, K, "PG", SoftmaxPGStep(eta), step, report, init, keep_policies)
    return trace


def run_terminated_npg(mdp: Mdp, eta: float, delta: float, lam: float, *, seed: int = 0,
                       tie_tolerance: float = DEFAULT_TIE_TOL):
    """Run ceil(kappa) constant-step NPG iterations, then play argmax of the advantage.

    Returns ``(policy, kappa)`` where ``policy`` is deterministic. Ties in the final
    argmax are broken with ``numpy.random.default_rng(seed)``.
    """
    if not lam > 1:
        raise ParameterError(f"lambda must exceed 1, got {lam!r}")
    ConstantEta(eta)
    if not delta > 0:
        raise ParameterError(f"delta must be positive, got {delta!r}")
    S, A = mdp.n_states, mdp.n_actions
    if math.isinf(delta):
        return uniform_policy(S, A), 0
    kappa = math.ceil(terminated_kappa(mdp.discount, A, eta, delta, lam))
    pi = uniform_policy(S, A)
    for _ in range(kappa):
        _, q = q_values(mdp, pi)
        pi = npg_step(pi, q, eta)
    v, q = q_values(mdp, pi)
    adv = advantage(q, v)
    rng = np.random.default_rng(seed)
    choice = np.empty(S, dtype=int)
    for s in range(S):
        best = np.flatnonzero(adv[s] >= adv[s].max() - tie_tolerance)
        choice[s] = best[0] if best.size == 1 else rng.choice(best)
    lp = np.full((S, A), -np.inf)
    lp[np.arange(S), choice] = 0.0
    return Policy(lp), kappa


def terminated_kappa(gamma, n_actions, eta, delta, lam) -> float:
    """Real-valued threshold (lambda / Delta) (log|A| / eta + 1 / (1 - gamma)^2)."""
    return (lam / delta) * (math.log(n_actions) / eta + 1.0 / (1.0 - gamma) ** 2)


RUNNERS: dict[str, Callable] = {
    "PG": run_softmax_pg,
    "NPG-C": run_npg_constant,
    "NPG-I": run_npg_increasing,
    "NPG-A": run_npg_adaptive,
    "NPG-AI": run_npg_adaptive,
}
