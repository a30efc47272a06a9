"""Shared test plumbing: the acceptance suite records one line per criterion
here, and the terminal summary prints them whether the run passed or failed.
"""

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(criterion: int, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(
        f"criterion {criterion} {name}: {'pass' if passed else 'FAIL'} ({detail})"
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
