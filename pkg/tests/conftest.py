import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one PASS/FAIL line per acceptance criterion after the run."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "_RESULTS", None) if module else None
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
