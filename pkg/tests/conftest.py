"""Shared pytest plumbing: surface the acceptance PASS/FAIL lines.

The acceptance tests register one line per criterion; printing them from a
terminal-summary hook keeps them visible even when pytest captures stdout.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
