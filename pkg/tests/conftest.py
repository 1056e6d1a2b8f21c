import pytest

ACCEPTANCE_LINES = {}


@pytest.fixture
def report():
    """Record one acceptance line: report(number, passed, detail)."""

    def record(number, passed, detail):
        ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
