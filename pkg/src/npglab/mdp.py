"""Tabular MDP and policy data model, validation, generators and file format."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any

import numpy as np

from .errors import ParameterError, ParseError

ROW_SUM_TOL = 1e-12
POLICY_ROW_TOL = 1e-10
GENERATOR_ID = f"numpy.random.default_rng/PCG64 (numpy {np.__version__.split('.')[0]}.x)"
MAX_SEED = 2**64 - 1


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def check_discount(gamma):
    gamma = float(gamma)
    if not (0.0 < gamma < 1.0):
        raise ParameterError(f"discount must lie in (0, 1), got {gamma!r}")
    return gamma


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite MDP with transition tensor ``P[s, a, s']`` and expected rewards ``R[s, a]``.

    Construction only checks shapes; use :func:`validate` for the value invariants.
    ``strict=False`` allows rewards outside [0, 1]; the bounds module refuses such instances.
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    name: str | None = None
    seed_metadata: dict[str, Any] | None = None
    strict: bool = True

    def __post_init__(self):
        P = _frozen(self.transition)
        R = _frozen(self.reward)
        if R.ndim != 2 or R.shape[0] < 1 or R.shape[1] < 1:
            raise ParameterError(f"reward must be a non-empty |S|x|A| table, got shape {R.shape}")
        S, A = R.shape
        if P.shape != (S, A, S):
            raise ParameterError(f"transition must have shape {(S, A, S)}, got {P.shape}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "discount", float(self.discount))
        if self.seed_metadata is not None:
            object.__setattr__(self, "seed_metadata", dict(self.seed_metadata))

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @cached_property
    def digest(self) -> str:
        """SHA-256 over (dims, discount, reward, transition); identifies an instance in traces."""
        h = hashlib.sha256()
        h.update(np.array([self.n_states, self.n_actions], dtype="<i8").tobytes())
        h.update(np.array([self.discount], dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.reward, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.transition, dtype="<f8").tobytes())
        return h.hexdigest()

    def metadata(self) -> dict[str, Any]:
        meta = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.discount,
            "mdp_digest": self.digest,
            "reward_mode": "strict" if self.strict else "relaxed",
        }
        if self.name:
            meta["name"] = self.name
        if self.seed_metadata:
            meta.update({k: v for k, v in self.seed_metadata.items() if k not in meta})
        return meta


@dataclass(frozen=True, eq=False)
class Policy:
    """Row-stochastic policy stored as log-probabilities (``-inf`` marks an exact zero)."""

    log_prob: np.ndarray

    def __post_init__(self):
        lp = _frozen(self.log_prob)
        if lp.ndim != 2 or lp.shape[0] < 1 or lp.shape[1] < 1:
            raise ParameterError(f"log_prob must be a non-empty |S|x|A| table, got shape {lp.shape}")
        if np.isnan(lp).any() or np.isposinf(lp).any():
            raise ParameterError("log_prob entries must be finite reals or -inf")
        object.__setattr__(self, "log_prob", lp)

    @classmethod
    def from_probs(cls, probs) -> Policy:
        p = np.asarray(probs, dtype=float)
        if (p < 0).any():
            raise ParameterError("probabilities must be non-negative")
        with np.errstate(divide="ignore"):
            return cls(np.log(p))

    @property
    def n_states(self) -> int:
        return self.log_prob.shape[0]

    @property
    def n_actions(self) -> int:
        return self.log_prob.shape[1]

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_prob)

    def row_log_mass(self) -> np.ndarray:
        """log-sum-exp of every row; zero for a valid policy."""
        m = self.log_prob.max(axis=1)
        return m + np.log(np.exp(self.log_prob - m[:, None]).sum(axis=1))

    def is_valid(self, tol=POLICY_ROW_TOL) -> bool:
        return bool(np.all(np.abs(self.row_log_mass()) <= tol))


@dataclass(frozen=True)
class Violation:
    kind: str
    location: tuple
    magnitude: float
    message: str


def validate(mdp: Mdp) -> list[Violation]:
    """Report every violated invariant of ``mdp``; an empty list means valid."""
    out = []
    g = mdp.discount
    if not (0.0 < g < 1.0) or not math.isfinite(g):
        out.append(Violation("discount", (), g, f"discount {g!r} outside (0, 1)"))

    P = mdp.transition
    bad = ~np.isfinite(P)
    for s, a, t in zip(*np.nonzero(bad)):
        out.append(Violation("non_finite_prob", (int(s), int(a), int(t)), float(P[s, a, t]),
                             f"P({t}|{s},{a}) is not finite"))
    neg = np.isfinite(P) & (P < 0)
    for s, a, t in zip(*np.nonzero(neg)):
        out.append(Violation("negative_prob", (int(s), int(a), int(t)), float(-P[s, a, t]),
                             f"P({t}|{s},{a}) = {P[s, a, t]!r} is negative"))
    deficit = 1.0 - P.sum(axis=2)
    for s, a in zip(*np.nonzero(~(np.abs(deficit) <= ROW_SUM_TOL))):
        out.append(Violation("row_sum", (int(s), int(a)), float(deficit[s, a]),
                             f"sum_s' P(s'|{s},{a}) differs from 1 by {deficit[s, a]:.3g}"))

    R = mdp.reward
    for s, a in zip(*np.nonzero(~np.isfinite(R))):
        out.append(Violation("non_finite_reward", (int(s), int(a)), float(R[s, a]),
                             f"R({s},{a}) is not finite"))
    if mdp.strict:
        with np.errstate(invalid="ignore"):
            over = np.where(np.isfinite(R), np.maximum(R - 1.0, -R), 0.0)
        for s, a in zip(*np.nonzero(over > 0)):
            out.append(Violation("reward_range", (int(s), int(a)), float(over[s, a]),
                                 f"R({s},{a}) = {R[s, a]!r} outside [0, 1]"))
    return out


def check_mdp(mdp: Mdp) -> Mdp:
    """Raise :class:`ParameterError` listing the violations if ``mdp`` is invalid."""
    report = validate(mdp)
    if report:
        head = "; ".join(v.message for v in report[:5])
        more = f" (+{len(report) - 5} more)" if len(report) > 5 else ""
        raise ParameterError(f"invalid MDP: {head}{more}")
    return mdp


def _check_dims(n_states, n_actions):
    if int(n_states) != n_states or int(n_actions) != n_actions or n_states < 1 or n_actions < 1:
        raise ParameterError(f"dimensions must be positive integers, got ({n_states}, {n_actions})")
    return int(n_states), int(n_actions)


def random_mdp(seed: int, n_states: int, n_actions: int, gamma: float, *, name=None) -> Mdp:
    """Random instance: i.i.d. U[0,1] rewards; each P(.|s,a) is i.i.d. U[0,1] entries rescaled to sum 1.

    Rewards are drawn before transitions from ``numpy.random.default_rng(seed)``.
    """
    S, A = _check_dims(n_states, n_actions)
    gamma = check_discount(gamma)
    if int(seed) != seed or not (0 <= seed <= MAX_SEED):
        raise ParameterError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    rng = np.random.default_rng(int(seed))
    reward = rng.random((S, A))
    raw = rng.random((S, A, S))
    transition = raw / raw.sum(axis=2, keepdims=True)
    meta = {"seed": int(seed), "generator": GENERATOR_ID}
    return Mdp(transition, reward, gamma, name=name, seed_metadata=meta)


def bandit_mdp(rewards, gamma: float, *, strict=True) -> Mdp:
    """Single-state MDP: every action loops back with reward ``rewards[a]``."""
    r = np.asarray(rewards, dtype=float).reshape(-1)
    if r.size < 1:
        raise ParameterError("a bandit needs at least one action")
    if not np.all(np.isfinite(r)):
        raise ParameterError("bandit rewards must be finite")
    if strict and (r.min() < 0 or r.max() > 1):
        raise ParameterError("bandit rewards must lie in [0, 1] in strict mode")
    gamma = check_discount(gamma)
    return Mdp(np.ones((1, r.size, 1)), r[None, :], gamma, name="bandit", strict=strict)


def uniform_policy(n_states: int, n_actions: int) -> Policy:
    S, A = _check_dims(n_states, n_actions)
    return Policy(np.full((S, A), -math.log(A)))


def deterministic_policy(actions, n_actions: int) -> Policy:
    actions = np.asarray(actions, dtype=int)
    lp = np.full((actions.size, n_actions), -np.inf)
    lp[np.arange(actions.size), actions] = 0.0
    return Policy(lp)


def uniform_rho(n_states: int) -> np.ndarray:
    return np.full(n_states, 1.0 / n_states)


def check_rho(rho, n_states) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (n_states,):
        raise ParameterError(f"initial distribution must have shape ({n_states},), got {rho.shape}")
    if (rho < 0).any() or abs(rho.sum() - 1.0) > ROW_SUM_TOL:
        raise ParameterError("initial distribution must be non-negative and sum to 1")
    return rho


def check_policy(policy: Policy, mdp: Mdp) -> Policy:
    if policy.log_prob.shape != mdp.reward.shape:
        raise ParameterError(
            f"policy shape {policy.log_prob.shape} does not match MDP {mdp.reward.shape}")
    return policy


# --- text format -------------------------------------------------------------

def fmt_float(x) -> str:
    """17 significant digits: parses back to the identical double."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json_array(values) -> str:
    return "[" + ", ".join(fmt_float(v) for v in np.asarray(values, dtype=float).ravel()) + "]"


def dumps_mdp(mdp: Mdp) -> str:
    lines = ["{"]
    if mdp.name is not None:
        lines.append(f'  "name": {json.dumps(mdp.name)},')
    lines.append(f'  "n_states": {mdp.n_states},')
    lines.append(f'  "n_actions": {mdp.n_actions},')
    lines.append(f'  "discount": {fmt_float(mdp.discount)},')
    if not mdp.strict:
        lines.append('  "reward_mode": "relaxed",')
    if mdp.seed_metadata:
        lines.append(f'  "seed_metadata": {json.dumps(mdp.seed_metadata, sort_keys=True)},')
    lines.append(f'  "reward": {_json_array(mdp.reward)},')
    lines.append(f'  "transition": {_json_array(mdp.transition)}')
    lines.append("}")
    return "\n".join(lines) + "\n"


def dumps_policy(policy: Policy) -> str:
    return (
        "{\n"
        f'  "n_states": {policy.n_states},\n'
        f'  "n_actions": {policy.n_actions},\n'
        f'  "prob": {_json_array(policy.probs)}\n'
        "}\n"
    )


def _field_line(text, name):
    needle = f'"{name}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def _load_object(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed document: {e.msg}", line=e.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("document must be an object", line=1)
    return doc


def _get(doc, text, name, kind):
    if name not in doc:
        raise ParseError("missing required field", field=name)
    v = doc[name]
    ok = {
        "int": isinstance(v, int) and not isinstance(v, bool) and v >= 1,
        "num": isinstance(v, (int, float)) and not isinstance(v, bool),
        "list": isinstance(v, list),
    }[kind]
    if not ok:
        raise ParseError(f"expected {kind}, got {type(v).__name__}", field=name,
                         line=_field_line(text, name))
    return v


def _numbers(doc, text, name, n):
    v = _get(doc, text, name, "list")
    if len(v) != n:
        raise ParseError(f"expected {n} entries, got {len(v)}", field=name, line=_field_line(text, name))
    try:
        return np.array([float(x) for x in v], dtype=float)
    except (TypeError, ValueError):
        raise ParseError("entries must be numbers", field=name, line=_field_line(text, name)) from None


def loads_mdp(text: str) -> Mdp:
    doc = _load_object(text)
    S = _get(doc, text, "n_states", "int")
    A = _get(doc, text, "n_actions", "int")
    gamma = float(_get(doc, text, "discount", "num"))
    reward = _numbers(doc, text, "reward", S * A).reshape(S, A)
    transition = _numbers(doc, text, "transition", S * A * S).reshape(S, A, S)
    mode = doc.get("reward_mode", "strict")
    if mode not in ("strict", "relaxed"):
        raise ParseError("reward_mode must be 'strict' or 'relaxed'", field="reward_mode",
                         line=_field_line(text, "reward_mode"))
    meta = doc.get("seed_metadata")
    if meta is not None and not isinstance(meta, dict):
        raise ParseError("seed_metadata must be an object", field="seed_metadata",
                         line=_field_line(text, "seed_metadata"))
    return Mdp(transition, reward, gamma, name=doc.get("name"), seed_metadata=meta,
               strict=(mode == "strict"))


def loads_policy(text: str) -> Policy:
    doc = _load_object(text)
    S = _get(doc, text, "n_states", "int")
    A = _get(doc, text, "n_actions", "int")
    prob = _numbers(doc, text, "prob", S * A).reshape(S, A)
    if (prob < 0).any():
        raise ParseError("probabilities must be non-negative", field="prob", line=_field_line(text, "prob"))
    return Policy.from_probs(prob)


def save_mdp(mdp: Mdp, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_mdp(mdp))


def load_mdp(path) -> Mdp:
    with open(path, encoding="utf-8") as f:
        return loads_mdp(f.read())


def save_policy(policy: Policy, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_policy(policy))


def load_policy(path) -> Policy:
    with open(path, encoding="utf-8") as f:
        return loads_policy(f.read())
