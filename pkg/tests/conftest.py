import pytest

# (criterion, passed, detail) rows appended by test_acceptance.py
ACCEPTANCE_ROWS = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_ROWS


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_ROWS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(ACCEPTANCE_ROWS, key=lambda row: row[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
