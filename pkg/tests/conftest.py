"""Shared acceptance-line recorder.

Acceptance tests record one PASS/FAIL line per criterion before asserting,
so the verdict table prints even when a criterion legitimately fails; the
collected lines are echoed in the terminal summary.
"""

import pytest

_LINES = []


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} ({detail})"
        _LINES.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES):
        terminalreporter.write_line(line)
