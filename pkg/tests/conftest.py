import numpy as np
import pytest

from quaffure.fixtures import demo_groom, procedural_body
from quaffure.potentials import MaterialParams


@pytest.fixture(scope="session")
def body():
    return procedural_body()


@pytest.fixture(scope="session")
def groom20(body):
    return demo_groom(body, 20, seed=0, name="straight")


@pytest.fixture(scope="session")
def wavy20(body):
    return demo_groom(body, 20, style="wavy", seed=1, name="wavy")


@pytest.fixture
def material():
    return MaterialParams.guide_hair()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``criterion(n, name, passed, detail)`` prints and records one acceptance line."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def report(n, name, passed, detail):
        line = f"criterion {n:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        print(line)
        lines.append(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
