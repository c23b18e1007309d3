import time

import pytest

from rhc_estim.estimator import run_scenario
from rhc_estim.model import lorenz_model
from rhc_estim.scenario import builtin_scenario

# acceptance lines collected during the session, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def lorenz():
    m = lorenz_model()
    m.kernels  # compile (or load from cache) once per session
    return m


class TimedRun:
    def __init__(self, scenario, snapshots=()):
        self.scenario = scenario
        t0 = time.perf_counter()
        self.table = run_scenario(scenario, snapshots=snapshots)
        self.elapsed = time.perf_counter() - t0


@pytest.fixture(scope="session")
def const_run(lorenz):
    return TimedRun(builtin_scenario("lorenz-const"), snapshots=(10.0,))


@pytest.fixture(scope="session")
def tv_run(lorenz):
    return TimedRun(builtin_scenario("lorenz-tv"))


@pytest.fixture(scope="session")
def tv_noise_run(lorenz):
    return TimedRun(builtin_scenario("lorenz-tv-noise"))
