"""Collects one verdict line per acceptance criterion and prints them after the run."""

import pytest

_VERDICTS: dict = {}


@pytest.fixture
def verdict():
    def record(criterion: int, ok: bool, detail: str) -> None:
        _VERDICTS.setdefault(criterion, []).append((bool(ok), detail))
        assert ok, f"criterion {criterion}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_VERDICTS):
        parts = _VERDICTS[criterion]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        details = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {criterion}: {status}  {details}")
