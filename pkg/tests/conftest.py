import pytest

_REPORT: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Collects one verdict line per acceptance criterion."""

    def add(line: str) -> None:
        _REPORT.append(line)
        print(line)

    return add


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
