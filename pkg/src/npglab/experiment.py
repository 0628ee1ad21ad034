"""Multi-algorithm comparison on one generated instance, emitting a combined CSV and an SVG chart."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .algorithms import (
    ConstantL,
    IncreasingEta,
    LinearL,
    run_npg_adaptive,
    run_npg_constant,
    run_npg_increasing,
    run_softmax_pg,
    softmax_pg_eta,
)
from .errors import ParameterError, ParseError
from .mdp import GENERATOR_ID, check_discount, random_mdp, uniform_policy, uniform_rho
from .solver import DEFAULT_TIE_TOL, solve
from .svg import line_chart
from .traceio import write_traces

ALGORITHMS = ("PG", "NPG-C", "NPG-I", "NPG-A", "NPG-AI")


@dataclass(frozen=True)
class ExperimentConfig:
    """Defaults follow the standard 70-state, 10-action comparison; ``gamma`` and ``iterations`` are our picks.

    Step parameters left as ``None`` resolve from (gamma, n_actions): PG uses
    (1-gamma)^3 / (2|A|gamma), NPG-C log|A|, and NPG-I / NPG-A / NPG-AI -log(gamma).
    """

    n_states: int = 70
    n_actions: int = 10
    gamma: float = 0.9
    seed: int = 0
    iterations: int = 50
    rho: str = "uniform"
    algorithms: tuple[str, ...] = ALGORITHMS
    pg_eta: float | None = None
    npgc_eta: float | None = None
    npgi_c: float | None = None
    npgi_offset: int = 1
    npga_L: float | None = None
    npgai_L: float | None = None
    npgai_offset: int = 0
    tie_tolerance: float = DEFAULT_TIE_TOL
    out_dir: str = "."

    def __post_init__(self):
        check_discount(self.gamma)
        if self.n_states < 1 or self.n_actions < 1:
            raise ParameterError("n_states and n_actions must be positive")
        if self.iterations < 0:
            raise ParameterError("iterations must be non-negative")
        if self.rho != "uniform":
            raise ParameterError(f"only rho = uniform is supported, got {self.rho!r}")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ParameterError(f"algorithms must be a non-empty subset of {ALGORITHMS}, got {bad}")

    def resolved(self) -> dict:
        """Concrete step parameters actually used."""
        neg_log_g = -math.log(self.gamma)
        pick = lambda x, d: d if x is None else x  # noqa: E731
        return {
            "pg_eta": pick(self.pg_eta, softmax_pg_eta(self.gamma, self.n_actions)),
            "npgc_eta": pick(self.npgc_eta, math.log(self.n_actions)),
            "npgi_c": pick(self.npgi_c, neg_log_g),
            "npgi_offset": self.npgi_offset,
            "npga_L": pick(self.npga_L, neg_log_g),
            "npgai_L": pick(self.npgai_L, neg_log_g),
            "npgai_offset": self.npgai_offset,
        }


_INT_KEYS = {"n_states", "n_actions", "seed", "iterations", "npgi_offset", "npgai_offset"}
_FLOAT_KEYS = {"gamma", "pg_eta", "npgc_eta", "npgi_c", "npga_L", "npgai_L", "tie_tolerance"}
_ALIASES = {"states": "n_states", "actions": "n_actions", "K": "iterations", "iters": "iterations",
            "out": "out_dir"}


def parse_config(text: str) -> ExperimentConfig:
    """Read ``key = value`` lines; ``#`` starts a comment. Errors name the key and line."""
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ParseError("expected 'key = value'", line=lineno)
        key = _ALIASES.get(key, key)
        if key not in known:
            raise ParseError(f"unknown key {key!r}", line=lineno, field=key)
        if key in values:
            raise ParseError(f"duplicate key {key!r}", line=lineno, field=key)
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = None if value.lower() in ("", "default") else float(value)
            elif key == "algorithms":
                values[key] = tuple(a.strip().upper() for a in value.split(",") if a.strip())
            else:
                values[key] = value
        except ValueError:
            raise ParseError(f"bad value {value!r}", line=lineno, field=key) from None
    try:
        return ExperimentConfig(**values)
    except ParameterError as e:
        raise ParseError(str(e), field="config") from None


def _threads(n_jobs):
    env = os.environ.get("NPGLAB_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ParameterError(f"NPGLAB_THREADS must be an integer, got {env!r}") from None
        if cap < 1:
            raise ParameterError("NPGLAB_THREADS must be at least 1")
    return max(1, min(cap, n_jobs))


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    traces: tuple
    metadata: dict
    csv_text: str
    svg_text: str

    def trace(self, algorithm):
        return next(t for t in self.traces if t.algorithm == algorithm)


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Generate the instance, run each selected algorithm from the uniform policy, assemble outputs."""
    mdp = random_mdp(config.seed, config.n_states, config.n_actions, config.gamma)
    report = solve(mdp, config.tie_tolerance)
    rho = uniform_rho(mdp.n_states)
    init = uniform_policy(mdp.n_states, mdp.n_actions)
    p = config.resolved()
    K = config.iterations
    common = dict(report=report, init=init, keep_policies=False)
    jobs = {
        "PG": lambda: run_softmax_pg(mdp, K, rho, eta=p["pg_eta"], **common),
        "NPG-C": lambda: run_npg_constant(mdp, p["npgc_eta"], K, rho, **common),
        "NPG-I": lambda: run_npg_increasing(mdp, IncreasingEta(p["npgi_c"], p["npgi_offset"]), K, rho,
                                            **common),
        "NPG-A": lambda: run_npg_adaptive(mdp, ConstantL(p["npga_L"]), K, rho, algorithm="NPG-A",
                                          tie_tolerance=config.tie_tolerance, **common),
        "NPG-AI": lambda: run_npg_adaptive(mdp, LinearL(p["npgai_L"], p["npgai_offset"]), K, rho,
                                           algorithm="NPG-AI", tie_tolerance=config.tie_tolerance,
                                           **common),
    }
    selected = [a for a in ALGORITHMS if a in config.algorithms]
    with ThreadPoolExecutor(max_workers=_threads(len(selected))) as pool:
        futures = [pool.submit(jobs[a]) for a in selected]
        traces = tuple(f.result() for f in futures)

    metadata = dict(mdp.metadata())
    metadata.update(seed=config.seed, generator=GENERATOR_ID, iterations=K, rho="uniform",
                    algorithms=list(selected), tie_tolerance=config.tie_tolerance,
                    v_star_rho=report.value(rho), **p)
    csv_text = write_traces(traces, metadata)
    series = {t.algorithm: (list(range(K + 1)), [r.scaled_error for r in t.records]) for t in traces}
    svg_text = line_chart(
        series, title=f"{config.n_states} states, {config.n_actions} actions, gamma={config.gamma:g}, "
                      f"seed={config.seed}",
        xlabel="iteration", ylabel="|S| (V*(rho) - V(rho))")
    if write:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"experiment_seed{config.seed}"
        (out / f"{stem}.csv").write_text(csv_text)
        (out / f"{stem}.svg").write_text(svg_text)
    return ExperimentResult(config, traces, metadata, csv_text, svg_text)


def with_seed(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(config, seed=seed)
