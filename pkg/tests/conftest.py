import pytest

_CRITERIA = []


class _Recorder:
    def __call__(self, name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
        _CRITERIA.append(line)
        print(line)
        assert ok, line


@pytest.fixture
def criterion():
    """Record one acceptance criterion outcome and fail the test if it did not hold."""
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
