import numpy as np
import pytest

from hdm.heat_operator import GridShape, SchemeParams, build_operators
from hdm.schedule import linear_schedule

# filled by tests/test_acceptance.py, printed once at the end of the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, seconds, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name:<28} {seconds:7.2f}s  {detail}")
    n_pass = sum(1 for r in ACCEPTANCE if r[1])
    terminalreporter.write_line(f"{n_pass}/{len(ACCEPTANCE)} criteria passed")


def make_ops(rows, cols, K, theta=0.5, **kw):
    return build_operators(GridShape(rows, cols), SchemeParams(theta=theta, K=K, **kw))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ops3():
    return make_ops(3, 3, 0.095)


@pytest.fixture(scope="session")
def ops2():
    return make_ops(2, 2, 0.095)


@pytest.fixture(scope="session")
def sch5():
    return linear_schedule(5)


@pytest.fixture(scope="session")
def sch10():
    return linear_schedule(10)
