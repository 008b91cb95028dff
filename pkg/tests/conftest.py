"""Collects the one-line acceptance verdicts and prints them after the run."""

ACCEPTANCE_LINES = []


def record(number, title, ok, detail):
    ACCEPTANCE_LINES.append((number, f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
