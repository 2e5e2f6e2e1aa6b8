"""Collects acceptance verdicts and prints them as one block after the run."""
import pytest

VERDICTS = {}


@pytest.fixture
def verdict(capsys):
    """``verdict(n, ok, detail)`` records and prints one PASS/FAIL line for criterion n."""
    def record(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS[n] = line
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
