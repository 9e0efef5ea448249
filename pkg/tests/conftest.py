import pytest

from gemsim.scenario import load_scenario

# criterion number -> (passed, detail), filled by test_acceptance.py
CRITERIA = {}


@pytest.fixture(scope="session")
def paper():
    return load_scenario("paper")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
