import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from acceptance_log import LOG  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number): one numbered acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not LOG.entries:
        return
    terminalreporter.section("acceptance criteria")
    for line in LOG.lines():
        terminalreporter.write_line(line)
