import numpy as np
import pytest

from stochlab.profile import ModelManifold, WarpingProfile

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion and print it."""
    def record(name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


@pytest.fixture(scope="session")
def e2():
    return ModelManifold(2, WarpingProfile.euclidean(), 64.0, name="E2")


@pytest.fixture(scope="session")
def e3():
    return ModelManifold(3, WarpingProfile.euclidean(), 64.0, name="E3")


@pytest.fixture(scope="session")
def h2():
    return ModelManifold(2, WarpingProfile.hyperbolic(1.0), 64.0, cartan_hadamard=True,
                         name="H2")


@pytest.fixture(scope="session")
def polyexp():
    return ModelManifold(2, WarpingProfile.polyexp(1.0, 3.0, 1.0), 100.0, name="PolyExp")


@pytest.fixture(scope="session")
def cusp():
    return ModelManifold(2, WarpingProfile.cusp(1.0, 3.0, 1.0), 16.0, name="Cusp")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
