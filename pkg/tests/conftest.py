import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from acql import robot as rm

settings.register_profile(
    "default",
    deadline=None,
    max_examples=200,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", deadline=None, max_examples=50)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def model():
    return rm.load_robot()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotvec(rng, max_angle):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(0.0, max_angle)


@pytest.fixture(scope="session")
def stand_50kg_run():
    """The bundled 50 kg offset-payload stand, 8 s noiseless."""
    from acql import harness

    return harness.run_scenario(harness.load_scenario("stand_50kg"))


class AcceptanceLog:
    """Collects one verdict line per acceptance criterion."""

    def __init__(self):
        self.lines = {}

    def record(self, number: int, title: str, ok: bool, detail: str) -> bool:
        self.lines[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        print(self.lines[number])
        return ok


@pytest.fixture(scope="session")
def acceptance(request):
    log = AcceptanceLog()
    request.config._acceptance_log = log
    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = getattr(config, "_acceptance_log", None)
    if log is None or not log.lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(log.lines):
        terminalreporter.write_line(log.lines[number])
