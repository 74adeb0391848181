import pytest

_VERDICTS: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture
def verdict():
    """Record one acceptance criterion: ``verdict(n, ok, title, detail)``."""

    def record(n: int, ok: bool, title: str, detail: str = "") -> bool:
        _VERDICTS[n] = (bool(ok), title, detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, title, detail = _VERDICTS[n]
        terminalreporter.write_line(f"[{n}] {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else ""))
