"""Collects the acceptance verdicts and prints one line per criterion."""
from collections import OrderedDict

_VERDICTS: "OrderedDict[int, list]" = OrderedDict()


def record(criterion: int, passed: bool, detail: str) -> None:
    _VERDICTS.setdefault(criterion, []).append((bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_VERDICTS):
        parts = _VERDICTS[crit]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {crit:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
