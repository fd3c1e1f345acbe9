"""Shared pytest plumbing.

The acceptance suite records one verdict per criterion; this hook prints
them as a block at the end of the run so the pass/fail roll-up is visible
even when per-test output is captured.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, elapsed in results:
        terminalreporter.write_line(f"{status:4s}  {name}  ({elapsed:.2f}s)")
