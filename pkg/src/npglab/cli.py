"""``npglab`` command line: gen, solve, run, bounds, experiment.

Exit codes: 0 success, 1 certification violation, 2 usage / parse / parameter error,
3 I/O error.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .algorithms import (
    ConstantEta,
    ConstantL,
    GeometricL,
    IncreasingEta,
    LinearL,
    run_npg_adaptive,
    run_npg_constant,
    run_npg_increasing,
    run_softmax_pg,
    run_terminated_npg,
    terminated_kappa,
)
from .bounds import (
    ENVELOPES,
    BanditBoundParams,
    BoundParams,
    CertReport,
    bandit_lower,
    bandit_upper,
    certify,
    lemma5_gap,
    o1k_envelope,
    thm1_envelope,
    thm2_envelope,
)
from .errors import NpgLabError, ParameterError
from .experiment import ExperimentConfig, parse_config, run_experiment
from .mdp import (
    Policy,
    check_discount,
    check_mdp,
    check_rho,
    dumps_mdp,
    dumps_policy,
    fmt_float,
    load_mdp,
    random_mdp,
    uniform_rho,
)
from .solver import DEFAULT_TIE_TOL, evaluate_policy, solve
from .traceio import read_traces, trace_from_rows, write_traces

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

ALG_IDS = {"pg": "PG", "npg-c": "NPG-C", "npg-i": "NPG-I", "npg-a": "NPG-A", "npg-ai": "NPG-AI",
           "npg-ag": "NPG-AG", "terminated": "terminated"}


# --- argument types --------------------------------------------------------------

def gamma_arg(text):
    try:
        return check_discount(float(text))
    except (ValueError, ParameterError):
        raise argparse.ArgumentTypeError(f"gamma must be a number in (0, 1), got {text!r}") from None


def positive_int(text):
    try:
        n = int(text)
    except ValueError:
        n = 0
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return n


def nonneg_int(text):
    try:
        n = int(text)
    except ValueError:
        n = -1
    if n < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}")
    return n


def resolve_eta(text, gamma, n_actions) -> float:
    """A float, or one of the symbolic values ``log|A|`` and ``-log(gamma)``."""
    t = text.replace(" ", "").lower()
    if t in ("log|a|", "loga", "log(|a|)"):
        return math.log(n_actions)
    if t in ("-log(gamma)", "-loggamma", "-log(g)"):
        return -math.log(gamma)
    try:
        return float(text)
    except ValueError:
        raise ParameterError(f"cannot read step value {text!r}") from None


def parse_rho(text, n_states):
    if text is None or text == "uniform":
        return "uniform", uniform_rho(n_states)
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise ParameterError(f"rho must be 'uniform' or comma-separated numbers, got {text!r}") from None
    return vals, check_rho(np.array(vals), n_states)


# --- helpers ---------------------------------------------------------------------

def _emit(text, out, stdout):
    if out in (None, "-"):
        stdout.write(text)
    else:
        Path(out).write_text(text)


def _load(path, gamma=None):
    mdp = load_mdp(path)
    if gamma is not None and gamma != mdp.discount:
        mdp = replace(mdp, discount=gamma)
    return check_mdp(mdp)


def _fmt_delta(d):
    return "inf" if math.isinf(d) else repr(float(d))


# --- subcommands -----------------------------------------------------------------

def cmd_gen(args, stdout):
    gamma = 0.9 if args.gamma is None else args.gamma
    mdp = random_mdp(args.seed, args.states, args.actions, gamma, name=args.name)
    report = solve(mdp)
    _emit(dumps_mdp(mdp), args.out, stdout)
    summary = (f"n_states={mdp.n_states} n_actions={mdp.n_actions} gamma={gamma!r} "
               f"seed={args.seed} delta={_fmt_delta(report.gap_delta)} "
               f"dummy_states={len(report.dummy_states)} mdp_digest={mdp.digest}\n")
    (sys.stderr if args.out in (None, "-") else stdout).write(summary)
    return EXIT_OK


def cmd_solve(args, stdout):
    mdp = _load(args.mdp, args.gamma)
    report = solve(mdp, args.tie_tolerance)
    _, rho = parse_rho(args.rho, mdp.n_states)
    sizes = [int(n) for n in report.optimal.sum(axis=1)]
    lines = [
        f"v_star_rho={fmt_float(report.value(rho))}",
        f"delta={_fmt_delta(report.gap_delta)}",
        f"dummy_states={list(report.dummy_states)}",
        f"optimal_set_sizes={sizes}",
    ]
    if args.eta is not None:
        eta = resolve_eta(args.eta, mdp.discount, mdp.n_actions)
        ConstantEta(eta)
        if not args.lam > 1:
            raise ParameterError(f"lambda must exceed 1, got {args.lam!r}")
        if math.isinf(report.gap_delta):
            lines.append("kappa omitted: delta=inf (every state is a dummy state, every policy is optimal)")
        else:
            k = terminated_kappa(mdp.discount, mdp.n_actions, eta, report.gap_delta, args.lam)
            lines.append(f"kappa={math.ceil(k)} kappa_real={fmt_float(k)}")
    stdout.write("\n".join(lines) + "\n")
    if args.policy_out:
        greedy = report.optimal
        lp = np.where(greedy, 0.0, -np.inf)
        lp -= np.log(greedy.sum(axis=1, keepdims=True))
        Path(args.policy_out).write_text(dumps_policy(Policy(lp)))
    return EXIT_OK


def _run_trace(mdp, alg, args, rho, report):
    K = args.iters
    g, A = mdp.discount, mdp.n_actions
    common = dict(report=report)
    if alg == "PG":
        eta = None if args.eta is None else resolve_eta(args.eta, g, A)
        return run_softmax_pg(mdp, K, rho, eta=eta, **common)
    if alg == "NPG-C":
        eta = resolve_eta(args.eta or "log|A|", g, A)
        return run_npg_constant(mdp, eta, K, rho, **common)
    if alg == "NPG-I":
        c = None if args.c is None else resolve_eta(args.c, g, A)
        return run_npg_increasing(mdp, IncreasingEta(c, 1 if args.offset is None else args.offset), K, rho,
                                  **common)
    L = resolve_eta(args.L or "-log(gamma)", g, A)
    if alg == "NPG-A":
        ls = ConstantL(L)
    elif alg == "NPG-AI":
        ls = LinearL(L, 0 if args.offset is None else args.offset)
    else:
        ls = GeometricL(L, args.p)
    return run_npg_adaptive(mdp, ls, K, rho, algorithm=alg, tie_tolerance=args.tie_tolerance, **common)


def bound_columns(trace, report, lam=2.0, lambda_b=0.5) -> dict:
    """Per-iteration envelope values that apply to ``trace`` (``None`` where undefined)."""
    meta = trace.mdp_metadata
    if meta.get("reward_mode") == "relaxed":
        return {}
    g, A, S = float(meta["gamma"]), int(meta["n_actions"]), int(meta["n_states"])
    n = len(trace.records)
    cols = {}
    sched = trace.schedule
    if isinstance(sched, ConstantEta):
        bp = BoundParams(g, A, sched.eta, lam, report.gap_delta)
        cols["thm1"] = [thm1_envelope(bp, k) for k in range(n)]
        cols["o1k"] = [None] + [o1k_envelope(g, A, sched.eta, k) for k in range(1, n)]
        if S == 1 and math.isfinite(report.gap_delta):
            bb = BanditBoundParams(sched.eta, report.gap_delta, g, A, lambda_b)
            cols["prop1_lower"] = [bandit_lower(bb, k) for k in range(n)]
            kb = bb.kappa_b
            if kb < n:
                e_kb = trace.records[kb].error
                cols["thm4_upper"] = [None if k < kb else bandit_upper(bb, e_kb, k) for k in range(n)]
    elif sched is not None and hasattr(sched, "l_schedule"):
        ls = sched.l_schedule
        mode = {ConstantL: "constant", LinearL: "linear"}.get(type(ls))
        if mode:
            err0 = trace.records[0].error
            cols["thm2"] = [thm2_envelope(g, ls.L, mode, err0, k) for k in range(n)]
        cols["lemma5"] = [None if r.l_k is None else lemma5_gap(g, r.l_k) for r in trace.records]
    return cols


def cmd_run(args, stdout):
    mdp = _load(args.mdp, args.gamma)
    alg = ALG_IDS[args.alg]
    report = solve(mdp, args.tie_tolerance)
    if alg == "terminated":
        eta = resolve_eta(args.eta or "log|A|", mdp.discount, mdp.n_actions)
        policy, kappa = run_terminated_npg(mdp, eta, report.gap_delta, args.lam, seed=args.seed,
                                           tie_tolerance=args.tie_tolerance)
        residual = float(np.abs(evaluate_policy(mdp, policy) - report.v_star).max())
        if args.out:
            Path(args.out).write_text(dumps_policy(policy))
        stdout.write(f"kappa={kappa}\nresidual={fmt_float(residual)}\n")
        return EXIT_OK
    rho_label, rho = parse_rho(args.rho, mdp.n_states)
    trace = _run_trace(mdp, alg, args, rho, report)
    meta = dict(trace.mdp_metadata, iterations=args.iters, rho=rho_label, init="uniform",
                tie_tolerance=args.tie_tolerance, v_star_rho=report.value(rho))
    bounds = {alg: bound_columns(trace, report, args.lam, args.lambda_b)} if args.with_bounds else None
    _emit(write_traces([trace], meta, bounds), args.out, stdout)
    return EXIT_OK


DEFAULT_ENVELOPES = {"NPG-C": ("thm1", "o1k"), "NPG-A": ("thm2", "lemma5", "pi_gap"),
                     "NPG-AI": ("thm2", "lemma5", "pi_gap"), "NPG-AG": ("lemma5", "pi_gap")}
_NEEDS_RERUN = {"lemma4", "lemma5", "pi_gap"}


def _rerun(mdp, trace, report, meta, tie_tolerance):
    """Regenerate a run from its recorded schedule; confirms the CSV matches before using it."""
    if meta.get("init", "uniform") != "uniform":
        raise ParameterError("only traces started from the uniform policy can be regenerated")
    K = len(trace.records) - 1
    sched = trace.schedule
    if isinstance(sched, ConstantEta):
        full = run_npg_constant(mdp, sched.eta, K, trace.rho, report=report)
    elif isinstance(sched, IncreasingEta):
        full = run_npg_increasing(mdp, sched, K, trace.rho, report=report)
    elif sched is not None and hasattr(sched, "l_schedule"):
        full = run_npg_adaptive(mdp, sched.l_schedule, K, trace.rho, report=report,
                                algorithm=trace.algorithm, tie_tolerance=tie_tolerance)
    else:
        raise ParameterError(f"cannot regenerate a {trace.algorithm} trace")
    if not np.allclose(full.errors, trace.errors, rtol=0, atol=1e-12):
        raise ParameterError("trace rows do not match a regenerated run of the recorded schedule")
    return full


def cmd_bounds(args, stdout):
    mdp = _load(args.mdp)
    meta, rows = read_traces(Path(args.trace).read_text())
    if meta.get("mdp_digest") != mdp.digest:
        raise ParameterError("trace provenance mismatch: its mdp_digest does not match this MDP file")
    if args.gamma is not None and args.gamma != mdp.discount:
        raise ParameterError("--gamma differs from the MDP's discount")
    algs = [args.alg] if args.alg else sorted(rows)
    tie = float(meta.get("tie_tolerance", DEFAULT_TIE_TOL))
    report = solve(mdp, tie)
    out_lines, checks, any_bad = [], [], False
    for alg in algs:
        if alg not in rows:
            raise ParameterError(f"trace has no rows for algorithm {alg!r}")
        trace = trace_from_rows(alg, rows[alg], meta)
        which = args.envelope or DEFAULT_ENVELOPES.get(alg)
        if mdp.n_states == 1 and args.envelope is None and alg == "NPG-C":
            which = ("prop1_lower", "thm4_upper")
        if not which:
            raise ParameterError(f"no default envelopes for {alg}; pass --envelope")
        if _NEEDS_RERUN & set(which):
            trace = _rerun(mdp, trace, report, meta, tie)
        cert = certify(trace, report, which, lam=args.lam, lambda_b=args.lambda_b)
        for c in cert.checks:
            first = c.first_violation_iter
            bad = sum(not r.ok for r in c.rows)
            any_bad |= bad > 0
            out_lines.append(f"algorithm={alg} envelope={c.name} kind={c.kind} rows={len(c.rows)} "
                             f"violations={bad} first_violation_iter={'none' if first is None else first}")
            checks.append((alg, c))
    stdout.write("\n".join(out_lines) + "\n")
    if args.out:
        parts = []
        for i, (alg, c) in enumerate(checks):
            body = CertReport((c,)).to_csv().splitlines()
            if i == 0:
                parts.append("algorithm," + body[0])
            parts.extend(f"{alg},{line}" for line in body[1:])
        Path(args.out).write_text("\n".join(parts) + "\n")
    return EXIT_VIOLATION if any_bad else EXIT_OK


def cmd_experiment(args, stdout):
    if args.config:
        cfg = parse_config(Path(args.config).read_text())
    else:
        cfg = ExperimentConfig()
    overrides = {k: v for k, v in dict(
        n_states=args.states, n_actions=args.actions, gamma=args.gamma, seed=args.seed,
        iterations=args.iters, out_dir=args.out).items() if v is not None}
    if args.algorithms:
        overrides["algorithms"] = tuple(a.strip().upper() for a in args.algorithms.split(","))
    cfg = replace(cfg, **overrides)
    res = run_experiment(cfg)
    stem = Path(cfg.out_dir) / f"experiment_seed{cfg.seed}"
    stdout.write(f"csv={stem}.csv\nsvg={stem}.svg\n")
    for t in res.traces:
        stdout.write(f"{t.algorithm}: scaled_error[K]={fmt_float(t.records[-1].scaled_error)}\n")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed")
    common.add_argument("--gamma", type=gamma_arg, default=None, help="discount factor in (0, 1)")
    common.add_argument("--out", "-o", default=None, help="output path ('-' or omitted: stdout)")

    p = argparse.ArgumentParser(prog="npglab", description="Exact natural policy gradient experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a random MDP")
    g.add_argument("--states", type=positive_int, default=70)
    g.add_argument("--actions", type=positive_int, default=10)
    g.add_argument("--name", default=None)

    s = sub.add_parser("solve", parents=[common], help="optimal values, gap and dummy states")
    s.add_argument("mdp")
    s.add_argument("--rho", default="uniform")
    s.add_argument("--eta", default=None, help="step for the kappa threshold (float, log|A|, -log(gamma))")
    s.add_argument("--lambda", dest="lam", type=float, default=2.0)
    s.add_argument("--policy-out", default=None)
    s.add_argument("--tie-tolerance", type=float, default=DEFAULT_TIE_TOL)

    r = sub.add_parser("run", parents=[common], help="run one algorithm and write a trace CSV")
    r.add_argument("mdp")
    r.add_argument("--alg", required=True, choices=sorted(ALG_IDS))
    r.add_argument("--iters", type=nonneg_int, default=50)
    r.add_argument("--eta", default=None, help="constant step (NPG-C, PG, terminated)")
    r.add_argument("--c", default=None, help="NPG-I slope")
    r.add_argument("--offset", type=nonneg_int, default=None, help="NPG-I / NPG-AI index offset")
    r.add_argument("--L", default=None, help="adaptive-step L")
    r.add_argument("--p", type=float, default=2.0, help="geometric L growth (npg-ag)")
    r.add_argument("--rho", default="uniform")
    r.add_argument("--lambda", dest="lam", type=float, default=2.0)
    r.add_argument("--lambda-b", dest="lambda_b", type=float, default=0.5)
    r.add_argument("--with-bounds", action="store_true", help="add bound_* columns")
    r.add_argument("--tie-tolerance", type=float, default=DEFAULT_TIE_TOL)

    b = sub.add_parser("bounds", parents=[common], help="certify a trace against convergence envelopes")
    b.add_argument("mdp")
    b.add_argument("trace")
    b.add_argument("--alg", default=None, help="algorithm id inside the trace (default: all)")
    b.add_argument("--envelope", type=lambda t: tuple(x.strip() for x in t.split(",")), default=None,
                   help=f"comma list from {', '.join(ENVELOPES)}")
    b.add_argument("--lambda", dest="lam", type=float, default=2.0)
    b.add_argument("--lambda-b", dest="lambda_b", type=float, default=0.5)

    e = sub.add_parser("experiment", parents=[common], help="compare the five algorithms on one instance")
    e.add_argument("--config", default=None, help="key = value config file")
    e.add_argument("--states", type=positive_int, default=None)
    e.add_argument("--actions", type=positive_int, default=None)
    e.add_argument("--iters", type=nonneg_int, default=None)
    e.add_argument("--algorithms", default=None, help="comma list, e.g. PG,NPG-C")
    return p


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "run": cmd_run, "bounds": cmd_bounds,
            "experiment": cmd_experiment}


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if args.command in ("gen", "run") and args.seed is None:
        args.seed = 0
    try:
        return COMMANDS[args.command](args, stdout)
    except (OSError, UnicodeDecodeError) as e:
        print(f"npglab: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except NpgLabError as e:
        print(f"npglab: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
