import pytest

_VERDICTS: list[tuple[str, bool, str]] = []


class Criterion:
    """Collects one acceptance verdict; the line is printed in the run summary."""

    def __call__(self, name: str, ok: bool, detail: str = ""):
        _VERDICTS.append((name, bool(ok), detail))
        assert ok, f"{name}: {detail}"


@pytest.fixture
def criterion():
    return Criterion()


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
