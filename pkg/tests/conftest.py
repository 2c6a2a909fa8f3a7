import numpy as np
import pytest

from conflap.instances import nodal_example, product_example


@pytest.fixture(scope="session")
def small_product():
    """32 x 16 product example: lambda_2 double, nu = 3."""
    return product_example(32, 16)


@pytest.fixture(scope="session")
def small_nodal():
    return nodal_example(128, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict = {}


def record(number: int, passed: bool, detail: str) -> None:
    """Store one acceptance outcome and echo it."""
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"ACCEPTANCE #{number}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"#{n:<2} {'PASS' if ok else 'FAIL'}  {detail}")
