"""Collects one pass/fail line per acceptance criterion and prints them after the run."""

RESULTS: dict[int, tuple[bool, str]] = {}
_SELECTED = []


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)


def pytest_collection_modifyitems(items):
    _SELECTED.extend(i for i in items if i.module.__name__.endswith("test_acceptance"))


def pytest_terminal_summary(terminalreporter):
    if not _SELECTED:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n not in RESULTS:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
            continue
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
