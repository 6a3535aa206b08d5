from __future__ import annotations

import pytest

_CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record a pass/fail line for an acceptance criterion, then assert it."""

    def record(label: str, passed: bool, detail: str = "") -> None:
        passed = bool(passed)
        _CRITERIA[label] = (passed, detail)
        print(f"criterion {label}: {'PASS' if passed else 'FAIL'} {detail}")
        assert passed, f"criterion {label} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")

    def order(label):
        head = "".join(ch for ch in label if ch.isdigit())
        return (int(head) if head else 0, label)

    for label in sorted(_CRITERIA, key=order):
        passed, detail = _CRITERIA[label]
        terminalreporter.write_line(f"criterion {label:<3} {'PASS' if passed else 'FAIL'}  {detail}")
