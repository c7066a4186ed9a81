import sys

import pytest

from hypertrick.simulator import golden_scenario

TOY_CMD = [sys.executable, "-m", "hypertrick.toy_worker"]

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


@pytest.fixture
def golden():
    return golden_scenario()


@pytest.fixture
def toy_cmd():
    return list(TOY_CMD)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
