import numpy as np
import pytest

from nharm.geometry import build_ball_mesh

CRITERIA: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        passed, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def coarse_ball():
    return build_ball_mesh(3, 0.3)


@pytest.fixture(scope="session")
def ball():
    return build_ball_mesh(3, 0.15)


@pytest.fixture(scope="session")
def disk():
    return build_ball_mesh(2, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
