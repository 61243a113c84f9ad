import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion; failures still raise."""

    def record(number, title, check):
        try:
            detail = check()
        except BaseException as exc:
            ACCEPTANCE_LINES.append(f"FAIL criterion {number}: {title} ({type(exc).__name__}: {exc})".splitlines()[0])
            raise
        ACCEPTANCE_LINES.append(f"PASS criterion {number}: {title}" + (f" ({detail})" if detail else ""))

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
