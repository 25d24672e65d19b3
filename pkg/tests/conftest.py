import pytest

SUMMARY = []


@pytest.fixture(scope="session")
def report_line():
    def add(line):
        SUMMARY.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if SUMMARY:
        terminalreporter.section("acceptance criteria")
        for line in SUMMARY:
            terminalreporter.write_line(line)
