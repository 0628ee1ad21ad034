import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import softmax

from npglab.algorithms import (
    ConstantL,
    GeometricL,
    IncreasingEta,
    LinearL,
    adaptive_eta,
    npg_step,
    run_npg_adaptive,
    run_npg_constant,
    run_npg_increasing,
    run_softmax_pg,
    run_terminated_npg,
    softmax_pg_eta,
    softmax_pg_gradient,
    terminated_kappa,
)
from npglab.errors import ParameterError
from npglab.mdp import Policy, bandit_mdp, random_mdp, uniform_policy
from npglab.solver import evaluate_policy, greedy_report, pi_target, policy_iteration, q_values, solve

from conftest import random_policy, small_mdps


def test_bandit_step_doubles_weight():
    pi = npg_step(uniform_policy(1, 2), np.array([[5.5, 4.5]]), math.log(2))
    np.testing.assert_allclose(pi.probs, [[2 / 3, 1 / 3]], atol=1e-15)


@given(st.floats(0, 1e6), st.floats(-50, 50), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_constant_q_row_is_a_fixed_point(eta, c, seed):
    pi = random_policy(np.random.default_rng(seed), 2, 4)
    out = npg_step(pi, np.full((2, 4), c), eta)
    np.testing.assert_allclose(out.probs, pi.probs, atol=1e-14)


@given(st.floats(-100, 100), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_step_ignores_per_row_shifts(shift, seed):
    rng = np.random.default_rng(seed)
    pi = random_policy(rng, 3, 3)
    q = rng.random((3, 3)) * 10
    a = npg_step(pi, q, 0.7).probs
    b = npg_step(pi, q + shift * rng.random((3, 1)), 0.7).probs
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_zero_step_is_identity_and_huge_step_is_finite():
    pi = Policy.from_probs([[0.1, 0.9]])
    np.testing.assert_allclose(npg_step(pi, np.array([[1.0, 0.0]]), 0.0).probs, pi.probs, atol=1e-15)
    big = npg_step(pi, np.array([[1.0, 0.0]]), 1e300)
    assert big.is_valid() and big.probs[0, 0] == 1.0
    with pytest.raises(ParameterError):
        npg_step(pi, np.array([[np.inf, 0.0]]), 1.0)


@pytest.mark.parametrize("seed", range(20))
def test_large_step_reaches_pi_target(seed):
    rng = np.random.default_rng(seed)
    pi = random_policy(rng, 4, 5)
    q = rng.permuted(np.tile(np.arange(5) * 1e-3, (4, 1)), axis=1) + rng.random((4, 1))
    target = pi_target(pi, greedy_report(q, tie_tolerance=0.0))
    tv = 0.5 * np.abs(npg_step(pi, q, 1e6).probs - target.probs).sum(axis=1).max()
    assert tv <= 1e-6


def test_bandit_closed_form_trace(bandit):
    tr = run_npg_constant(bandit, math.log(2), 1)
    assert tr.values[0] == pytest.approx(5.0, abs=1e-12)
    assert tr.values[1] == pytest.approx(20 / 3, abs=1e-12)
    assert len(run_npg_constant(bandit, 1.0, 0).records) == 1


def test_two_state_errors_never_increase(m2):
    errs = run_npg_constant(m2, 1.0, 50).errors
    assert errs[-1] <= errs[0]
    assert np.all(np.diff(errs) <= 1e-15)


@given(small_mdps(), st.floats(0.05, 5.0))
@settings(max_examples=30, deadline=None)
def test_values_improve_statewise(mdp, eta):
    tr = run_npg_constant(mdp, eta, 15)
    v_star = solve(mdp).v_star
    for r in tr.records[:-1]:
        assert r.value_vector_min_increase >= -1e-10
    for pi in tr.policies:
        assert np.all(q_values(mdp, pi)[1] <= solve(mdp).q_star + 1e-9)
        assert np.all(evaluate_policy(mdp, pi) <= v_star + 1e-9)


def test_runs_are_deterministic():
    mdp = random_mdp(4, 6, 3, 0.9)
    a = run_npg_adaptive(mdp, LinearL(0.1), 10)
    b = run_npg_adaptive(mdp, LinearL(0.1), 10)
    assert a.records == b.records


def test_increasing_schedule():
    assert IncreasingEta().eta(0, 0.9) == pytest.approx(0.1053605156578263)
    assert IncreasingEta(offset=0).eta(0, 0.9) == 0.0
    mdp = bandit_mdp([1.0, 0.0], 0.5)
    tr = run_npg_increasing(mdp, IncreasingEta(), 3)
    assert np.all(np.diff(tr.errors) < 0)
    lit = run_npg_increasing(mdp, IncreasingEta(offset=0), 1, keep_policies=True)
    np.testing.assert_array_equal(lit.policies[1].probs, lit.policies[0].probs)


def test_adaptive_step_values(m2):
    g = greedy_report(np.array([[5.5, 4.5]]))
    assert adaptive_eta(uniform_policy(1, 2), g, 1.0) == pytest.approx(1 + math.log(4))
    flat = greedy_report(np.array([[3.0, 3.0]]))
    assert adaptive_eta(uniform_policy(1, 2), flat, 1.0) == 1.0
    _, q = q_values(m2, uniform_policy(2, 2))
    eta = adaptive_eta(uniform_policy(2, 2), greedy_report(q), 1.0)
    assert eta == pytest.approx(1.5 * (1 + math.log(4)), rel=1e-12)


def test_adaptive_entry_gap(bandit, m2):
    L = -math.log(0.9)
    tr = run_npg_adaptive(bandit, ConstantL(L), 1)
    assert tr.final_policy.probs[0, 0] >= 1 - math.exp(-L) / 2
    tr = run_npg_adaptive(m2, LinearL(math.log(2)), 5)
    for r in tr.records[:-1]:
        assert r.pi_gap_tv <= math.exp(-r.l_k) / 2 + 1e-12
        assert r.pi_gap_tv <= math.exp(-math.log(2) * r.k) + 1e-12
    assert tr.algorithm == "NPG-AI"
    assert run_npg_adaptive(m2, GeometricL(1.0), 2).algorithm == "NPG-AG"


def test_schedule_validation():
    with pytest.raises(ParameterError):
        GeometricL(1.0, p=2.5)
    with pytest.raises(ParameterError):
        ConstantL(0.0)
    with pytest.raises(ParameterError):
        run_terminated_npg(bandit_mdp([1, 0], 0.5), 1.0, 0.5, lam=1.0)


# --- softmax policy gradient ---------------------------------------------------------

def finite_difference_gradient(mdp, theta, rho, h=1e-6):
    def value(t):
        return rho @ evaluate_policy(mdp, Policy.from_probs(softmax(t, axis=1)))

    grad = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        e = np.zeros_like(theta)
        e[idx] = h
        grad[idx] = (value(theta + e) - value(theta - e)) / (2 * h)
    return grad


@given(small_mdps(max_states=4, max_actions=3), st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_gradient_matches_finite_differences(mdp, seed):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=(mdp.n_states, mdp.n_actions))
    rho = rng.dirichlet(np.ones(mdp.n_states))
    pi = Policy.from_probs(softmax(theta, axis=1))
    np.testing.assert_allclose(softmax_pg_gradient(mdp, pi, rho),
                               finite_difference_gradient(mdp, theta, rho), atol=1e-6)


def test_softmax_pg_bandit_first_step(bandit):
    eta = softmax_pg_eta(0.9, 2)
    assert eta == pytest.approx(0.1 ** 3 / 3.6)
    tr = run_softmax_pg(bandit, 1)
    lp = tr.final_policy.log_prob[0]
    assert lp[0] - lp[1] == pytest.approx(5 * eta, rel=1e-9)
    # increment of the first logit alone, before renormalisation
    grad = softmax_pg_gradient(bandit, uniform_policy(1, 2), [1.0])
    assert eta * grad[0, 0] == pytest.approx(6.9444e-4, rel=1e-4)
    assert len(run_softmax_pg(bandit, 0).records) == 1


# --- terminated NPG ------------------------------------------------------------------

def test_terminated_two_state(m2):
    assert terminated_kappa(0.5, 2, math.log(2), 0.5, 2.0) == pytest.approx(20.0)
    pi, kappa = run_terminated_npg(m2, math.log(2), 0.5, 2.0)
    assert kappa == 20
    np.testing.assert_allclose(evaluate_policy(m2, pi), [1.0, 2.0], atol=1e-12)
    ref, _ = policy_iteration(m2)
    np.testing.assert_allclose(evaluate_policy(m2, pi), evaluate_policy(m2, ref), atol=1e-12)


def test_terminated_degenerate_cases():
    pi, kappa = run_terminated_npg(bandit_mdp([0.3, 0.3], 0.5), 1.0, math.inf, 2.0)
    assert kappa == 0 and np.allclose(pi.probs, 0.5)
    pi, _ = run_terminated_npg(bandit_mdp([1.0, 0.0], 0.9), math.log(2), 1.0, 1.5)
    np.testing.assert_array_equal(pi.probs, [[1.0, 0.0]])
