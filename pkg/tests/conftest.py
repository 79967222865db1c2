import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from seqlp import Ar1, IidGaussian, TwoStateChain  # noqa: E402
from seqlp.design import DesignProblem, design_test  # noqa: E402

AR1_GAMMA = (0.041, 0.0535)

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


@pytest.fixture(scope="session")
def iid_problem():
    return DesignProblem.build(IidGaussian(1.0, 1.0), (0.1, 0.1), m_z=201)


@pytest.fixture(scope="session")
def iid_design(iid_problem):
    return design_test(iid_problem)


@pytest.fixture(scope="session")
def chain_problem():
    return DesignProblem.build(TwoStateChain(), (0.05, 0.05), m_z=201)


@pytest.fixture(scope="session")
def chain_design(chain_problem):
    return design_test(chain_problem)


@pytest.fixture(scope="session")
def ar1_small_problem():
    return DesignProblem.build(Ar1(), AR1_GAMMA, m_z=31, m_theta=31)


@pytest.fixture(scope="session")
def ar1_small_design(ar1_small_problem):
    return design_test(ar1_small_problem)


@pytest.fixture(scope="session")
def ar1_coarse_problem():
    return DesignProblem.build(Ar1(), AR1_GAMMA, m_z=101, m_theta=101)


@pytest.fixture(scope="session")
def ar1_coarse_design(ar1_coarse_problem):
    return design_test(ar1_coarse_problem)


@pytest.fixture(scope="session")
def ar1_problem():
    return DesignProblem.build(Ar1(), AR1_GAMMA, m_z=201, m_theta=201)


@pytest.fixture(scope="session")
def ar1_design(ar1_problem):
    return design_test(ar1_problem)


@pytest.fixture
def record_criterion():
    def record(number, passed, detail):
        ACCEPTANCE_RESULTS[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
