"""Shared test plumbing: collects acceptance verdict lines and prints them
as a section of the terminal summary (capture would otherwise swallow them
on passing runs)."""

VERDICTS = []


def record_verdict(line: str):
    VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in VERDICTS:
        terminalreporter.write_line(line)
