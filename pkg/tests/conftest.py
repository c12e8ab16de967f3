"""Shared pytest hooks: echo the acceptance checklist after the run."""

import sys


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "ACCEPTANCE_LINES", None) if module else None
    if not lines:
        return
    terminalreporter.write_sep("-", "acceptance checklist")
    for line in lines:
        terminalreporter.write_line(line)
