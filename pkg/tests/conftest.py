import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from xmpc.evaluation import fit_suite_history
from xmpc.greenhouse import GreenhouseParams, build_greenhouse_ocp
from xmpc.scenarios import cold_night, greenhouse_suite

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance verdict line; it is printed and repeated in the summary."""
    lines = request.config.stash[_VERDICTS]

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(" ")[0]) if "criterion " in s else 0):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def suite_history():
    return fit_suite_history(0)


@pytest.fixture(scope="session")
def suite_scenarios():
    return greenhouse_suite(0)


@pytest.fixture(scope="session")
def greenhouse_spec():
    return build_greenhouse_ocp(GreenhouseParams(), 16)


@pytest.fixture(scope="session")
def cold_scenario():
    return cold_night("cold-night-test", np.random.default_rng([0, 0, 0]))
