import sys


def pytest_terminal_summary(terminalreporter):
    report = getattr(sys.modules.get("test_acceptance"), "REPORT", None)
    if report:
        terminalreporter.section("acceptance criteria")
        for line in sorted(report):
            terminalreporter.write_line(line)
