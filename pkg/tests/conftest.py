"""Shared pytest wiring for the suite."""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # acceptance checks print one line per criterion; stdout capture would
    # swallow them on passing runs, so repeat them after the test table
    lines = []
    for name, module in sys.modules.items():
        if name.rpartition(".")[2] == "test_acceptance":
            lines = getattr(module, "REPORT_LINES", [])
            break
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
