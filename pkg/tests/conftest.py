"""Shared pytest plumbing. The acceptance tests emit one verdict line per
check; collect them on the config object and echo the sorted list after the
run so the outcome of every check is visible in one block."""

import pytest


def pytest_configure(config):
    config._verdict_lines = []


@pytest.fixture
def verdict(request):
    """Record a named acceptance outcome, then assert it."""

    def emit(number: int, ok: bool, detail: str) -> None:
        line = f"check {number:02d}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        request.config._verdict_lines.append(line)
        assert ok, line

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_verdict_lines", [])
    if lines:
        terminalreporter.section("acceptance verdicts")
        for line in sorted(lines):
            terminalreporter.write_line(line)
