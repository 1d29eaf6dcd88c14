"""Shared pytest hooks.

The acceptance tests register one line per criterion; the terminal
summary prints them after the run so the verdict block survives output
capture.
"""

from __future__ import annotations


def pytest_configure(config):
    config._criterion_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
