"""Shared pytest plumbing.

test_acceptance.py records one PASS/FAIL line per release criterion via
`acceptance_lines`; the terminal-summary hook reprints them in one block
at the end of the run so the verdicts are visible without scrolling.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
