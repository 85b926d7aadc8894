import contextlib

import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion():
    """Context manager that records one PASS/FAIL line per acceptance criterion."""

    @contextlib.contextmanager
    def record(number, title):
        note = {}
        try:
            yield note
        except BaseException as exc:
            line = f"[FAIL] criterion {number}: {title} :: {note.get('msg', '')} ({type(exc).__name__}: {exc})"
            _LINES.append(line.replace("\n", " "))
            print(line)
            raise
        line = f"[PASS] criterion {number}: {title} :: {note.get('msg', '')}"
        _LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
