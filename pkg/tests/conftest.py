import pytest

_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL summary for an acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        _VERDICTS[number] = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])
