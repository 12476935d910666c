import numpy as np
import pytest
from hypothesis import strategies as st

from bazykin_af.model import Parameters

# constants used across the suite
SET_A = Parameters(gamma=1.0, alpha=1.0, xi=2.0, omega=4.0, epsilon=0.5, delta=8.0, m=6.0)
HOPF_SET = Parameters(gamma=15.0, alpha=0.1, xi=0.45, omega=0.01, epsilon=0.024, delta=0.45, m=0.28)
CONTROL_SET = Parameters(gamma=8.0, alpha=0.1, xi=0.1, omega=0.01, epsilon=0.01, delta=0.96, m=0.3)
CUSP_SET = Parameters(gamma=0.6545, alpha=0.1, xi=1.0, omega=0.1, epsilon=0.1, delta=0.6, m=0.2)


def random_parameters(rng, eps_zero=False):
    return Parameters(
        gamma=rng.uniform(0.2, 20.0),
        alpha=rng.uniform(0.0, 3.0),
        xi=rng.uniform(0.0, 5.0),
        omega=rng.uniform(0.0, 2.0),
        epsilon=0.0 if eps_zero else rng.uniform(0.0, 2.0),
        delta=rng.uniform(0.05, 10.0),
        m=rng.uniform(0.05, 5.0),
    )


parameters_st = st.builds(
    Parameters,
    gamma=st.floats(0.2, 20.0),
    alpha=st.floats(0.0, 3.0),
    xi=st.floats(0.0, 5.0),
    omega=st.floats(0.0, 2.0),
    epsilon=st.floats(0.0, 2.0),
    delta=st.floats(0.05, 10.0),
    m=st.floats(0.05, 5.0),
)
states_st = st.tuples(st.floats(0.0, 20.0), st.floats(0.0, 20.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0]), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
