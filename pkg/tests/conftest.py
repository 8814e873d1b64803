import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, "ACn PASS|FAIL detail", printed after the run
VERDICTS = {}


@pytest.fixture
def verdict():
    def record(n, ok, detail=""):
        VERDICTS[n] = f"AC{n} {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
