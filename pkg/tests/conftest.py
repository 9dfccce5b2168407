from collections import defaultdict

import pytest

_RESULTS = defaultdict(list)
_NOTES = defaultdict(list)


class Recorder:
    """Collects per-criterion outcomes for the terminal summary."""

    def check(self, criterion: int, part: str, ok: bool, detail: str) -> bool:
        _RESULTS[criterion].append((part, bool(ok), detail))
        return bool(ok)

    def note(self, criterion: int, text: str) -> None:
        _NOTES[criterion].append(text)


@pytest.fixture(scope="session")
def acceptance():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(_RESULTS):
        parts = _RESULTS[c]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        tr.write_line(f"criterion {c:>2}: {verdict}")
        for part, ok, detail in parts:
            tr.write_line(f"    [{'PASS' if ok else 'FAIL'}] {part}: {detail}")
        for text in _NOTES[c]:
            tr.write_line(f"    note: {text}")
