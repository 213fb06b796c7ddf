import pytest

_VERDICTS = []


class _Verdict:
    def __init__(self, capsys):
        self._capsys = capsys

    def __call__(self, number, ok, detail):
        line = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'} | {detail}"
        _VERDICTS.append(line)
        with self._capsys.disabled():
            print("\n" + line)
        return ok


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line for an acceptance criterion."""
    return _Verdict(capsys)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
