from __future__ import annotations

import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion; the summary prints a line per record."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:2d} {status}: {title} ({detail})"
        lines.append((number, line))
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
