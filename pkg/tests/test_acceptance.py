"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a single PASS/FAIL line; the lines are repeated in a summary
section at the end of the pytest run.
"""
import math
import time

import numpy as np
import pytest

from npglab.algorithms import (
    ConstantL,
    GeometricL,
    LinearL,
    npg_step,
    run_npg_adaptive,
    run_npg_constant,
    run_terminated_npg,
)
from npglab.bounds import (
    BanditBoundParams,
    BoundParams,
    bandit_lower,
    bandit_upper,
    certify,
    geometric_sum,
    geometric_sum_bound,
    superlinear_diag,
)
from npglab.experiment import ALGORITHMS, ExperimentConfig, run_experiment
from npglab.mdp import Policy, bandit_mdp, deterministic_policy, random_mdp, uniform_rho
from npglab.solver import (
    advantage,
    evaluate_policy,
    greedy_report,
    perf_difference,
    pi_target,
    policy_iteration,
    policy_matrices,
    q_values,
    solve,
)

from conftest import random_policy


def power_series_value(mdp, policy, tail=1e-12):
    P, r = policy_matrices(mdp, policy)
    g = mdp.discount
    n = math.ceil(math.log(tail * (1 - g)) / math.log(g)) + 1
    v, term = np.zeros_like(r), r.copy()
    for _ in range(n):
        v += term
        term = g * P @ term
    return v


def small_instance(i, gamma, max_states=6, max_actions=4):
    rng = np.random.default_rng(10_000 + i)
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    return random_mdp(i, S, A, gamma)


@pytest.fixture(scope="module")
def constant_step_runs():
    """20 instances, gamma = 0.5, eta = log|A|, K = 100."""
    runs = []
    for i in range(20):
        mdp = small_instance(i, 0.5)
        rep = solve(mdp)
        runs.append((mdp, rep, run_npg_constant(mdp, math.log(mdp.n_actions), 100, report=rep)))
    return runs


def test_c01_policy_evaluation_oracle(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        mdp = small_instance(i, 0.8)
        pi = random_policy(np.random.default_rng(i), mdp.n_states, mdp.n_actions)
        worst = max(worst, float(np.abs(evaluate_policy(mdp, pi) - power_series_value(mdp, pi)).max()))
    dt = time.perf_counter() - t0
    verdict(1, "policy evaluation matches power series", worst <= 1e-8 and dt < 5,
            f"max diff {worst:.2e}, {dt:.2f}s")


def test_c02_performance_difference(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(200):
        rng = np.random.default_rng(500 + i)
        mdp = small_instance(i, float(rng.uniform(0.1, 0.95)))
        p1 = random_policy(rng, mdp.n_states, mdp.n_actions)
        p2 = random_policy(rng, mdp.n_states, mdp.n_actions)
        rho = rng.dirichlet(np.ones(mdp.n_states))
        lhs = rho @ (evaluate_policy(mdp, p1) - evaluate_policy(mdp, p2))
        worst = max(worst, abs(lhs - perf_difference(mdp, p1, p2, rho)))
    dt = time.perf_counter() - t0
    verdict(2, "performance-difference identity", worst <= 1e-8 and dt < 5, f"max diff {worst:.2e}, {dt:.2f}s")


def test_c03_ranges_and_monotonicity(verdict, constant_step_runs):
    t0 = time.perf_counter()
    bad = []
    for i, (mdp, rep, tr) in enumerate(constant_step_runs):
        top = 1 / (1 - mdp.discount)
        prev = None
        for k, pi in enumerate(tr.policies):
            v, q = q_values(mdp, pi)
            a = advantage(q, v)
            if not (np.all(v >= -1e-12) and np.all(v <= top + 1e-12) and np.all(q >= -1e-12)
                    and np.all(q <= top + 1e-12) and np.all(np.abs(a) <= top + 1e-12)):
                bad.append((i, k, "range"))
            if np.any(q > rep.q_star + 1e-9):
                bad.append((i, k, "Q above Q*"))
            if prev is not None and np.any(v < prev - 1e-10):
                bad.append((i, k, "decrease"))
            prev = v
    dt = time.perf_counter() - t0
    verdict(3, "value ranges and statewise monotone improvement", not bad and dt < 30,
            f"{len(bad)} violations over 20 runs x 101 iterates, {dt:.2f}s")


def test_c04_constant_step_envelopes(verdict, constant_step_runs):
    violations, nonvacuous = 0, 0
    for mdp, rep, tr in constant_step_runs:
        cert = certify(tr, rep, ("thm1", "o1k"), lam=2.0)
        violations += cert.violations
        bp = BoundParams(mdp.discount, mdp.n_actions, math.log(mdp.n_actions), 2.0, rep.gap_delta)
        nonvacuous += bp.kappa <= 100
    verdict(4, "geometric and O(1/k) envelopes (lambda = 2)", violations == 0,
            f"{violations} violations; {nonvacuous}/20 runs pass the threshold within K = 100")


def test_c05_suboptimal_mass_envelope(verdict, constant_step_runs):
    violations, rows = 0, 0
    for mdp, rep, tr in constant_step_runs:
        check = certify(tr, rep, ("lemma4",), lam=2.0)["lemma4"]
        rows += len(check.rows)
        violations += sum(not r.ok for r in check.rows)
    verdict(5, "sub-optimal action probability envelope after the threshold", violations == 0,
            f"{violations} violations over {rows} checked iterates")


def test_c06_bandit_sandwich(verdict):
    t0 = time.perf_counter()
    bad, checked = 0, 0
    for gamma in (0.5, 0.9):
        mdp = bandit_mdp([1.0, 0.0], gamma)
        rep = solve(mdp)
        for eta in (math.log(2), math.log(mdp.n_actions)):
            errs = run_npg_constant(mdp, eta, 200, report=rep, keep_policies=False).errors
            bp = BanditBoundParams(eta, rep.gap_delta, gamma, 2, 0.5)
            for k, e in enumerate(errs):
                bad += e < bandit_lower(bp, k) - 1e-9
                checked += 1
                if k >= bp.kappa_b:
                    bad += e > bandit_upper(bp, errs[bp.kappa_b], k) + 1e-9
                    checked += 1
    dt = time.perf_counter() - t0
    verdict(6, "single-state lower and upper envelopes", bad == 0 and dt < 1,
            f"{bad} violations in {checked} checks, {dt:.2f}s")


def test_c07_adaptive_step_contracts(verdict):
    counts = {"lemma5": 0, "pi_gap": 0, "thm2": 0}
    L = -math.log(0.9)
    for i in range(20):
        rng = np.random.default_rng(20_000 + i)
        mdp = random_mdp(i, int(rng.integers(2, 11)), int(rng.integers(2, 11)), 0.9)
        rep = solve(mdp)
        for sched in (ConstantL(L), LinearL(L)):
            tr = run_npg_adaptive(mdp, sched, 30, report=rep, keep_policies=False)
            cert = certify(tr, rep, ("lemma5", "pi_gap", "thm2"))
            for c in cert.checks:
                counts[c.name] += sum(not r.ok for r in c.rows)
    verdict(7, "adaptive-step value gap, entry gap and envelope", not any(counts.values()),
            ", ".join(f"{k}: {v}" for k, v in counts.items()))


def test_c08_terminated_npg_is_exact(verdict):
    worst, accepted, seed = 0.0, 0, 0
    mismatch = 0
    while accepted < 50:
        rng = np.random.default_rng(30_000 + seed)
        mdp = random_mdp(seed, int(rng.integers(2, 9)), int(rng.integers(2, 6)), 0.5)
        seed += 1
        rep = solve(mdp)
        if not (1e-2 <= rep.gap_delta < math.inf):
            continue
        accepted += 1
        pi, _ = run_terminated_npg(mdp, math.log(mdp.n_actions), rep.gap_delta, 2.0, seed=seed)
        v = evaluate_policy(mdp, pi)
        worst = max(worst, float(np.abs(v - rep.v_star).max()))
        ref, _ = policy_iteration(mdp)
        mismatch += not np.allclose(v, evaluate_policy(mdp, ref), atol=1e-9, rtol=0)
    verdict(8, "terminated NPG returns an optimal policy", worst <= 1e-9 and mismatch == 0,
            f"max |V - V*| {worst:.2e}, {mismatch} disagreements with policy iteration, {seed} draws")


def test_c09_large_step_limit(verdict):
    worst = 0.0
    for i in range(50):
        rng = np.random.default_rng(40_000 + i)
        S, A = int(rng.integers(1, 6)), int(rng.integers(2, 6))
        pi = random_policy(rng, S, A)
        q = np.stack([rng.permutation(A) * (1e-3 + rng.random()) for _ in range(S)])
        assert np.all(np.diff(np.sort(q, axis=1), axis=1) >= 1e-3)
        target = pi_target(pi, greedy_report(q, tie_tolerance=0.0))
        tv = 0.5 * np.abs(npg_step(pi, q, 1e6).probs - target.probs).sum(axis=1).max()
        worst = max(worst, tv)
    verdict(9, "eta = 1e6 step matches the policy-iteration target", worst <= 1e-6, f"max TV {worst:.2e}")


def test_c10_comparison_ordering(verdict):
    t0 = time.perf_counter()
    cfg = ExperimentConfig()
    curves = {a: [] for a in ALGORITHMS}
    for seed in range(5):
        res = run_experiment(ExperimentConfig(seed=seed), write=False)
        for t in res.traces:
            curves[t.algorithm].append([r.scaled_error for r in t.records])
    med = {a: np.median(np.array(c), axis=0) for a, c in curves.items()}
    order = ("NPG-AI", "NPG-A", "NPG-C", "PG")
    broken = [(k, lo, hi) for k in range(1, cfg.iterations + 1)
              for lo, hi in zip(order, order[1:]) if med[lo][k] > med[hi][k] + 1e-9]
    first_step = med["NPG-A"][1] < med["NPG-C"][1]
    dt = time.perf_counter() - t0
    verdict(10, "median error ordering NPG-AI <= NPG-A <= NPG-C <= PG", not broken and first_step and dt < 60,
            f"{len(broken)} ordering breaks, k=1 NPG-A {med['NPG-A'][1]:.3g} vs NPG-C {med['NPG-C'][1]:.3g}, "
            f"{dt:.1f}s")


def test_c11_superlinear_ratio(verdict):
    gated, failures, ratios_seen = 0, 0, []
    L = 5.0
    for seed in range(20):
        mdp = random_mdp(seed, 4, 3, 0.5)
        rep = solve(mdp)
        best = deterministic_policy(rep.q_star.argmax(axis=1), 3).probs
        init = Policy.from_probs(0.999 * best + 0.001 / 3)
        rho = uniform_rho(4)
        tr = run_npg_adaptive(mdp, GeometricL(L, 2.0), 8, rho, report=rep, init=init)
        diag = superlinear_diag(mdp, tr, rho, 2.0, L, rep)
        if not diag.condition_ok:
            continue
        gated += 1
        for _, r in diag.ratios:
            ratios_seen.append(r)
            failures += r < 1.5
    ok = gated > 0 and ratios_seen and failures == 0
    verdict(11, "super-linear ratio test on instances passing the ex-post condition", ok,
            f"{gated}/20 gated, {len(ratios_seen)} ratios, min {min(ratios_seen):.2f}")


def test_c12_geometric_sum_grid(verdict):
    bad, checked = 0, 0
    for gamma in (0.5, 0.9, 0.99):
        base = -math.log(gamma)
        for L in (0.05, base - 0.1, base + 0.1, 1.0):
            if L <= 0:
                continue
            for k in range(101):
                checked += 1
                bad += geometric_sum(gamma, L, k) > geometric_sum_bound(gamma, L, k) + 1e-12
    verdict(12, "closed-form majorant of the discounted exponential sum", bad == 0,
            f"{bad} violations in {checked} grid points")
