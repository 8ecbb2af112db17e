"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

from __future__ import annotations

import pytest

CRITERIA = {
    1: "atomicity",
    2: "double-spend",
    3: "conservation",
    4: "consensus agreement",
    5: "escrow exclusivity",
    6: "oracle equivalences",
    7: "determinism",
    8: "tamper detection",
    9: "value-blindness",
}

_verdicts: dict[int, list[tuple[bool, str]]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    _verdicts.setdefault(criterion, []).append((ok, detail))
    print(_line(criterion, ok, detail))


def _line(criterion: int, ok: bool, detail: str) -> str:
    return f"[{'PASS' if ok else 'FAIL'}] {criterion}. {CRITERIA[criterion]}: {detail}"


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in CRITERIA:
        parts = _verdicts.get(criterion)
        if not parts:
            terminalreporter.write_line(f"[SKIP] {criterion}. {CRITERIA[criterion]}: not run")
            continue
        ok = all(p for p, _ in parts)
        terminalreporter.write_line(_line(criterion, ok, "; ".join(d for _, d in parts)))
