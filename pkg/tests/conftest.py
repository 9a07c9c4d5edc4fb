import re

import pytest

_LINES = []


@pytest.fixture(scope="session")
def criterion_log():
    """Record one PASS/FAIL line and fail the calling test when not passed.

    All lines are repeated in the terminal summary.
    """

    def log(label, passed, detail):
        line = f"{label}: {'PASS' if passed else 'FAIL'}  {detail}"
        _LINES.append(line)
        print(line)
        if not passed:
            pytest.fail(line, pytrace=False)

    return log


def _order(line):
    m = re.match(r"criterion (\d+)", line)
    return (0, int(m.group(1))) if m else (1, 0)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=_order):
            terminalreporter.write_line(line)
