"""Shared pytest plumbing for the suite.

The acceptance tests register one human-readable pass/fail line per
criterion; those lines are echoed in the terminal summary so the verdicts
survive output capturing.
"""

ACCEPTANCE_LINES: list[tuple[int, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
