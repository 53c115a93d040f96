import pytest

_LINES = {}


@pytest.fixture
def criterion(request):
    """Record ``criterion(n, passed, detail)``; printed as one line per criterion after the run."""

    def record(n, passed, detail=""):
        _LINES[n] = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
