import pytest

_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion; returns the pass flag."""
    def record(number, name, passed, detail):
        line = f"criterion {number} {name}: {'PASS' if passed else 'FAIL'} ({detail})"
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
