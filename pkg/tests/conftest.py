import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # surface the acceptance criterion lines even when capture is on
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CRITERION_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.line(line)
