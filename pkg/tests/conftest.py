"""Collects the one-line verdicts of the acceptance criteria and prints them after the run."""
import pytest

VERDICTS: list = []


@pytest.fixture
def verdict():
    """Record and print ``PASS``/``FAIL`` for a criterion, then assert it."""
    def record(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        VERDICTS.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
