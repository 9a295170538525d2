import numpy as np
import pytest

from rissense.epoch import make_epoch
from rissense.geometry import UEState
from rissense.scenario import Scenario


@pytest.fixture
def scenario():
    return Scenario()


@pytest.fixture
def small_scenario():
    """Reduced numerology for signal-level tests."""
    return Scenario(ris_shape=(8, 8), n_subcarriers=16, n_transmissions=8)


@pytest.fixture
def ue():
    return UEState([50.0, -30.0, 0.0], np.pi / 2, 11.11)


@pytest.fixture
def sps():
    return np.array([[40.0, 10.0, 5.0], [35.0, -20.0, 8.0], [45.0, 30.0, 3.0]])


@pytest.fixture
def setup(scenario, ue):
    return make_epoch(scenario, ue, np.random.default_rng(7))


# PASS/FAIL lines of the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    def report(criterion: int, checks: list[tuple[str, bool]]) -> bool:
        ok = all(passed for _, passed in checks)
        detail = "; ".join(f"{text} [{'ok' if passed else 'FAIL'}]" for text, passed in checks)
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
