"""Convergence envelopes for the NPG family and certification of run traces against them."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .algorithms import AdaptiveL, ConstantEta, ConstantL, LinearL, RunTrace
from .errors import DomainError, ParameterError
from .mdp import Mdp, deterministic_policy, fmt_float
from .solver import OptimalityReport, evaluate_policy, policy_matrices

UPPER_SLACK = 1e-9
PROB_SLACK = 1e-12


def _exp(x):
    if x > 709.0:
        return math.inf
    return math.exp(x)


def _check_gamma(gamma):
    if not (0.0 < gamma < 1.0):
        raise ParameterError(f"gamma must lie in (0, 1), got {gamma!r}")


# --- constant step ---------------------------------------------------------------

@dataclass(frozen=True)
class BoundParams:
    """Constants of the constant-step geometric envelope.

    ``C = log|A| / eta + 1 / (1 - gamma)^2`` and ``kappa = lam C / delta``.
    """

    gamma: float
    n_actions: int
    eta: float
    lam: float
    delta: float

    def __post_init__(self):
        _check_gamma(self.gamma)
        if self.n_actions < 1:
            raise ParameterError("n_actions must be >= 1")
        if not self.eta > 0:
            raise ParameterError(f"eta must be positive, got {self.eta!r}")
        if not self.lam > 1:
            raise ParameterError(f"lambda must exceed 1, got {self.lam!r}")
        if not self.delta > 0:
            raise ParameterError(f"delta must be positive, got {self.delta!r}")

    @property
    def C(self) -> float:
        return math.log(self.n_actions) / self.eta + 1.0 / (1.0 - self.gamma) ** 2

    @property
    def kappa(self) -> float:
        if math.isinf(self.delta):
            return 0.0
        return self.lam * self.C / self.delta

    @property
    def rate(self) -> float:
        """Per-iteration exponent (1 - 1/lam) eta delta."""
        return (1.0 - 1.0 / self.lam) * self.eta * self.delta


def thm1_envelope(params: BoundParams, K: int) -> float:
    """(1 / (1 - gamma)^2) exp(-(K - kappa)(1 - 1/lam) eta delta); raw, not capped at 1/(1 - gamma)."""
    scale = 1.0 / (1.0 - params.gamma) ** 2
    if math.isinf(params.delta):
        return 0.0 if K >= 1 else scale
    return scale * _exp(-(K - params.kappa) * params.rate)


def o1k_envelope(gamma: float, n_actions: int, eta: float, k: int) -> float:
    """(log|A| / eta + 1 / (1 - gamma)^2) / k."""
    _check_gamma(gamma)
    if k < 1:
        raise ParameterError("the O(1/k) envelope is defined for k >= 1")
    return (math.log(n_actions) / eta + 1.0 / (1.0 - gamma) ** 2) / k


def lemma4_envelope(pi_anchor, K: int, params: BoundParams, anchor: int | None = None):
    """Decay envelope for sub-optimal action probabilities after the threshold.

    ``pi_anchor`` is the probability at iteration ``anchor`` (default ``ceil(kappa)``);
    the envelope at ``K >= anchor`` is ``pi_anchor exp(-(K - anchor) rate)``.
    """
    if anchor is None:
        anchor = math.ceil(params.kappa)
    if anchor < params.kappa:
        raise DomainError(f"anchor {anchor} precedes kappa = {params.kappa:.6g}")
    if K < anchor:
        raise DomainError(f"K = {K} precedes the anchor iteration {anchor}")
    return np.asarray(pi_anchor) * _exp(-(K - anchor) * params.rate)


# --- adaptive step -----------------------------------------------------------------

def beta(gamma: float, L: float, k: int) -> float:
    if math.isclose(L, -math.log(gamma), rel_tol=1e-12, abs_tol=0.0):
        return k * math.exp(L)
    return 1.0 / abs(gamma - math.exp(-L))


def thm2_envelope(gamma: float, L: float, l_mode: str, err0: float, k: int) -> float:
    """Adaptive-step envelope; ``l_mode`` is ``"linear"`` (L_k = L k) or ``"constant"`` (L_k = L)."""
    _check_gamma(gamma)
    if not L > 0:
        raise ParameterError(f"L must be positive, got {L!r}")
    if k < 0:
        raise ParameterError("k must be non-negative")
    head = gamma ** k * err0
    if l_mode == "linear":
        return head + beta(gamma, L, k) * max(gamma ** k, math.exp(-L * k)) / (1.0 - gamma)
    if l_mode == "constant":
        return head + math.exp(-L) / (1.0 - gamma) ** 2
    raise ParameterError(f"unknown l_mode {l_mode!r}")


def lemma5_gap(gamma: float, L_k: float) -> float:
    """exp(-L_k) / (1 - gamma): NPG-step versus policy-iteration-target value gap."""
    _check_gamma(gamma)
    if not L_k >= 0:
        raise ParameterError(f"L_k must be non-negative, got {L_k!r}")
    return math.exp(-L_k) / (1.0 - gamma)


def geometric_sum(gamma: float, L: float, k: int) -> float:
    """sum_{i=0}^{k} gamma^i exp(-L (k - i)), summed term by term."""
    return math.fsum(gamma ** i * math.exp(-L * (k - i)) for i in range(k + 1))


def geometric_sum_bound(gamma: float, L: float, k: int) -> float:
    """Closed-form majorant max(gamma^(k+1), exp(-L(k+1))) / |gamma - exp(-L)|, for L != -log gamma."""
    return max(gamma ** (k + 1), math.exp(-L * (k + 1))) / abs(gamma - math.exp(-L))


# --- single state --------------------------------------------------------------------

@dataclass(frozen=True)
class BanditBoundParams:
    eta: float
    delta: float
    gamma: float
    n_actions: int
    lambda_b: float

    def __post_init__(self):
        _check_gamma(self.gamma)
        if not (0.0 < self.lambda_b < 1.0):
            raise ParameterError(f"lambda_b must lie in (0, 1), got {self.lambda_b!r}")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ParameterError(f"delta must be positive and finite, got {self.delta!r}")
        if not self.eta > 0:
            raise ParameterError(f"eta must be positive, got {self.eta!r}")

    @property
    def C(self) -> float:
        return 1.0 / (1.0 - self.gamma) ** 2 + math.log(self.n_actions) / self.eta

    @property
    def kappa_b(self) -> int:
        x = (self.C * (1.0 - self.gamma) / self.delta) / (1.0 - math.exp(-self.eta * self.delta * self.lambda_b))
        return max(1, math.ceil(x))


def bandit_lower(bp: BanditBoundParams, K: int) -> float:
    return bp.delta / ((1.0 - bp.gamma) * bp.n_actions) * math.exp(-bp.eta * bp.delta * K)


def bandit_upper(bp: BanditBoundParams, err_at_kappa_b: float, K: int) -> float:
    if K < bp.kappa_b:
        raise DomainError(f"upper envelope needs K >= kappa_b = {bp.kappa_b}, got {K}")
    decay = math.exp(-bp.eta * bp.delta * (1.0 - bp.lambda_b) * (K - bp.kappa_b))
    return min(decay * err_at_kappa_b, decay / (1.0 - bp.gamma))


def bandit_envelopes(bp: BanditBoundParams, err_at_kappa_b: float, K: int):
    """``(lower, upper)`` sandwich for single-state NPG with constant step."""
    return bandit_lower(bp, K), bandit_upper(bp, err_at_kappa_b, K)


# --- super-linear regime ---------------------------------------------------------------

def weighted_l1_matrix_norm(T, rho) -> float:
    """Operator norm induced by ||v||_rho = sum_s rho(s) |v(s)|: max_j sum_i rho_i |T_ij| / rho_j."""
    T = np.asarray(T, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1] or rho.shape != (T.shape[0],):
        raise ParameterError(f"shape mismatch: T {T.shape}, rho {rho.shape}")
    if not np.all(rho > 0):
        raise DomainError("weighted L1 norm needs rho > 0 on every state")
    return float(((rho @ np.abs(T)) / rho).max())


def weighted_l1_norm(v, rho) -> float:
    return float(np.asarray(rho) @ np.abs(np.asarray(v)))


def t_operator(mdp: Mdp, policy) -> np.ndarray:
    """gamma P_pi - I."""
    P_pi, _ = policy_matrices(mdp, policy)
    return mdp.discount * P_pi - np.eye(mdp.n_states)


@dataclass(frozen=True, eq=False)
class SuperlinearDiag:
    p: float
    L: float
    L_tilde: float
    M: float
    b: float
    condition_ok: bool
    envelope: np.ndarray            # per k; nan when b == 0 (formula degenerates)
    err_rho: np.ndarray             # |V*(rho) - V^pi_k(rho)|
    err_norm: np.ndarray            # ||V* - V^pi_k||_rho
    ratios: tuple = ()              # (k, log err_{k+1} / log err_k) once err_k < ratio_start

    @property
    def degenerate(self) -> bool:
        return self.b == 0.0


def _log_b_term(b, p):
    log_b = math.log(b) if b > 0 else -math.inf
    return log_b / (p - 1) + p * math.log(p) / (p - 1) ** 2


def superlinear_condition(err0, b, p, L, gamma) -> bool:
    c0 = _log_b_term(b, p)
    log_err0 = math.log(err0) if err0 > 0 else -math.inf
    return bool(log_err0 < -c0 and L > c0 - math.log(1.0 - gamma))


def superlinear_envelope(err0, b, p, L, gamma, k) -> float:
    c0 = _log_b_term(b, p)
    if math.isinf(c0):
        return math.nan
    pk = p ** k
    t1 = pk * (c0 + math.log(err0)) if err0 > 0 else -math.inf
    t2 = math.log(k) + pk * (c0 - math.log(1.0 - gamma) - L) if k > 0 else -math.inf
    return _exp(float(np.logaddexp(t1, t2)))


def superlinear_diag(mdp: Mdp, trace: RunTrace, rho, p: float, L: float, report: OptimalityReport,
                     *, err_floor: float = 1e-12, ratio_start: float = 1e-3) -> SuperlinearDiag:
    """Ex-post estimates of the Lipschitz and resolvent constants along a run, plus the envelope.

    L_tilde is the largest ||T_pi_k - T_pi*||_rho / ||V^pi_k - V*||_rho^(p-1) over iterates with
    error >= ``err_floor``; M is the largest ||T_pi_k^{-1}||_rho over all iterates.
    """
    if not mdp.strict:
        raise ParameterError("bounds are only defined for strict-mode MDPs (rewards in [0, 1])")
    if not trace.policies:
        raise ParameterError("trace must retain its policies")
    rho = np.asarray(rho, dtype=float)
    if not np.all(rho > 0):
        raise DomainError("super-linear diagnostics need rho > 0 on every state")
    pi_star = deterministic_policy(report.q_star.argmax(axis=1), mdp.n_actions)
    T_star = t_operator(mdp, pi_star)
    L_tilde, M = 0.0, 0.0
    err_rho, err_norm = [], []
    for pol in trace.policies:
        v = evaluate_policy(mdp, pol)
        e_rho = abs(float(rho @ (report.v_star - v)))
        e_norm = weighted_l1_norm(report.v_star - v, rho)
        err_rho.append(e_rho)
        err_norm.append(e_norm)
        T = t_operator(mdp, pol)
        M = max(M, weighted_l1_matrix_norm(np.linalg.inv(T), rho))
        if e_norm >= err_floor:
            L_tilde = max(L_tilde, weighted_l1_matrix_norm(T - T_star, rho) / e_norm ** (p - 1))
    b = L_tilde * M
    err0 = err_rho[0]
    env = np.array([superlinear_envelope(err0, b, p, L, mdp.discount, k) for k in range(len(err_rho))])
    ratios = []
    for k in range(len(err_rho) - 1):
        e0, e1 = err_rho[k], err_rho[k + 1]
        if e0 < ratio_start and e0 >= err_floor and e1 >= err_floor:
            ratios.append((k, math.log(e1) / math.log(e0)))
    return SuperlinearDiag(p, L, L_tilde, M, b, superlinear_condition(err0, b, p, L, mdp.discount),
                           env, np.array(err_rho), np.array(err_norm), tuple(ratios))


# --- certification ---------------------------------------------------------------------

@dataclass(frozen=True)
class CertRow:
    iter: int
    empirical: float
    bound: float
    ok: bool


@dataclass(frozen=True)
class EnvelopeCheck:
    name: str
    kind: str                 # "upper" or "lower"
    rows: tuple[CertRow, ...]

    @property
    def first_violation_iter(self) -> int | None:
        for r in self.rows:
            if not r.ok:
                return r.iter
        return None

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)


@dataclass(frozen=True)
class CertReport:
    checks: tuple[EnvelopeCheck, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def violations(self) -> int:
        return sum(not r.ok for c in self.checks for r in c.rows)

    def __getitem__(self, name) -> EnvelopeCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["envelope", "iter", "empirical", "bound", "ok", "kind"])
        for c in self.checks:
            for r in c.rows:
                w.writerow([c.name, r.iter, fmt_float(r.empirical), fmt_float(r.bound),
                            int(r.ok), c.kind])
        return buf.getvalue()


ENVELOPES = ("thm1", "o1k", "lemma4", "thm2", "lemma5", "pi_gap", "thm4_upper", "prop1_lower")


def _upper(name, pairs, slack=UPPER_SLACK):
    return EnvelopeCheck(name, "upper", tuple(
        CertRow(k, float(e), float(b), bool(e <= b + slack)) for k, e, b in pairs))


def _constant_eta(trace):
    if isinstance(trace.schedule, ConstantEta):
        return trace.schedule.eta
    raise ParameterError(f"envelope needs a constant-step trace, got {trace.algorithm}")


def _l_schedule(trace):
    if isinstance(trace.schedule, AdaptiveL):
        return trace.schedule.l_schedule
    raise ParameterError(f"envelope needs an adaptive-step trace, got {trace.algorithm}")


def certify(trace: RunTrace, report: OptimalityReport, which=("thm1", "o1k"), *,
            lam: float = 2.0, lambda_b: float = 0.5, params: BoundParams | None = None) -> CertReport:
    """Compare a trace with each requested envelope; ``which`` is a subset of :data:`ENVELOPES`.

    Upper bounds pass with ``empirical <= bound + 1e-9`` (``1e-12`` for probability
    envelopes), lower bounds with ``empirical >= bound - 1e-9``.
    """
    meta = trace.mdp_metadata
    if report.mdp_digest is not None and meta.get("mdp_digest") not in (None, report.mdp_digest):
        raise ParameterError("trace and optimality report come from different MDPs")
    if meta.get("reward_mode") == "relaxed":
        raise ParameterError("bounds are only defined for strict-mode MDPs (rewards in [0, 1])")
    gamma = float(meta["gamma"])
    A = int(meta["n_actions"])
    errs = [r.error for r in trace.records]
    checks = []
    for name in which:
        if name not in ENVELOPES:
            raise ParameterError(f"unknown envelope {name!r}; choose from {ENVELOPES}")
        if name in ("thm1", "lemma4"):
            bp = params or BoundParams(gamma, A, _constant_eta(trace), lam, report.gap_delta)
            if name == "thm1":
                checks.append(_upper("thm1", [(k, e, thm1_envelope(bp, k)) for k, e in enumerate(errs)]))
            else:
                checks.append(_lemma4_check(trace, report, bp))
        elif name == "o1k":
            eta = _constant_eta(trace)
            checks.append(_upper("o1k", [(k, errs[k], o1k_envelope(gamma, A, eta, k))
                                         for k in range(1, len(errs))]))
        elif name == "thm2":
            ls = _l_schedule(trace)
            if isinstance(ls, ConstantL):
                mode = "constant"
            elif isinstance(ls, LinearL):
                mode = "linear"
            else:
                raise ParameterError("the adaptive envelope covers constant and linear L schedules")
            checks.append(_upper("thm2", [(k, e, thm2_envelope(gamma, ls.L, mode, errs[0], k))
                                          for k, e in enumerate(errs)]))
        elif name == "lemma5":
            _l_schedule(trace)
            checks.append(_upper("lemma5", [(r.k, r.pi_value_gap, lemma5_gap(gamma, r.l_k))
                                            for r in trace.records if r.pi_value_gap is not None]))
        elif name == "pi_gap":
            _l_schedule(trace)
            checks.append(_upper("pi_gap", [(r.k, r.pi_gap_tv, math.exp(-r.l_k) / A)
                                            for r in trace.records if r.pi_gap_tv is not None],
                                 slack=PROB_SLACK))
        else:
            if int(meta["n_states"]) != 1:
                raise ParameterError(f"{name} applies to single-state MDPs only")
            bb = BanditBoundParams(_constant_eta(trace), report.gap_delta, gamma, A, lambda_b)
            if name == "prop1_lower":
                checks.append(EnvelopeCheck("prop1_lower", "lower", tuple(
                    CertRow(k, e, bandit_lower(bb, k), bool(e >= bandit_lower(bb, k) - UPPER_SLACK))
                    for k, e in enumerate(errs))))
            else:
                kb = bb.kappa_b
                rows = []
                if kb < len(errs):
                    rows = [(k, errs[k], bandit_upper(bb, errs[kb], k)) for k in range(kb, len(errs))]
                checks.append(_upper("thm4_upper", rows))
    return CertReport(tuple(checks))


def _lemma4_check(trace, report, bp):
    if not trace.policies:
        raise ParameterError("lemma4 certification needs the trace's policies")
    anchor = math.ceil(bp.kappa)
    live = np.ones(report.optimal.shape[0], dtype=bool)
    live[list(report.dummy_states)] = False
    mask = live[:, None] & ~report.optimal
    rows = []
    if anchor < len(trace.policies) and mask.any():
        base = trace.policies[anchor].probs
        for K in range(anchor, len(trace.policies)):
            env = lemma4_envelope(base, K, bp, anchor)
            pk = trace.policies[K].probs
            excess = np.where(mask, pk - env, -np.inf)
            s, a = np.unravel_index(int(np.argmax(excess)), excess.shape)
            rows.append((K, pk[s, a], env[s, a]))
    return _upper("lemma4", rows, slack=PROB_SLACK)
