from __future__ import annotations

import pytest

# criterion id -> list of (passed, detail); filled by the acceptance module
ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}

TITLES = {
    1: "linear Fokker-Planck baseline",
    2: "exact mass identities",
    3: "Burgers two-representation equivalence",
    4: "jump/weight equivalence",
    5: "time-reversal round trip",
    6: "random-environment conservativity",
    7: "HJB toy problem",
    8: "oracle self-consistency",
    9: "determinism across thread counts",
}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(TITLES):
        entries = ACCEPTANCE.get(cid)
        if not entries:
            continue
        ok = all(p for p, _ in entries)
        details = "; ".join(d for _, d in entries)
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {cid}. {TITLES[cid]}: {details}")
