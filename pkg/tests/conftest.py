"""Shared pytest plumbing: replay the acceptance lines after the run.

Passing tests have their stdout captured, so the per-criterion PASS/FAIL
lines would otherwise only survive for failures; collecting them here keeps
the whole checklist visible in plain `pytest -v` output.
"""

CRITERION_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)
