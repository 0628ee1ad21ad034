import numpy as np
import pytest
from hypothesis import strategies as st

from npglab.mdp import Mdp, Policy, bandit_mdp, random_mdp


def two_state_mdp(gamma=0.5):
    """s0: a0 stays, a1 moves to s1. s1 absorbs. Rewards 0 in s0, 1 in s1."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = 1.0
    P[0, 1, 1] = 1.0
    P[1, :, 1] = 1.0
    R = np.array([[0.0, 0.0], [1.0, 1.0]])
    return Mdp(P, R, gamma, name="two-state")


@pytest.fixture
def m2():
    return two_state_mdp()


@pytest.fixture
def bandit():
    return bandit_mdp([1.0, 0.0], 0.9)


def random_policy(rng, S, A):
    return Policy.from_probs(rng.dirichlet(np.ones(A), size=S))


@st.composite
def small_mdps(draw, max_states=5, max_actions=4, gammas=(0.3, 0.9)):
    seed = draw(st.integers(0, 2**32 - 1))
    S = draw(st.integers(1, max_states))
    A = draw(st.integers(1, max_actions))
    gamma = draw(st.floats(*gammas))
    return random_mdp(seed, S, A, gamma)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""
    def record(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _VERDICTS.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
