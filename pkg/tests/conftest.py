import pytest

# criterion number -> summary line, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def report():
    def record(n: int, ok: bool, detail: str, status: str | None = None):
        line = f"criterion {n:2d}: {status or ('PASS' if ok else 'FAIL')}  {detail}"
        ACCEPTANCE_LINES[n] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
