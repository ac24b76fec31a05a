import pytest

_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line for the acceptance summary."""

    def emit(criterion: int, name: str, value: float, tol: float, ok: bool):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion:2d} {name}: {value:.3e} (tolerance {tol:.0e})"
        print(line)
        _LINES.append(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
