import pytest

# Lines recorded by the acceptance suite, printed once at the end of the run.
ACCEPTANCE_LINES = []


@pytest.fixture
def report_line():
    def record(line):
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
