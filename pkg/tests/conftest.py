from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class AcceptanceRecorder:
    def record(self, number: int, title: str, passed: bool, detail: str = "") -> None:
        _ACCEPTANCE[number] = (title, bool(passed), detail)
        print(f"[acceptance {number:2d}] {'PASS' if passed else 'FAIL'}  {title}  {detail}")


@pytest.fixture(scope="session")
def acceptance() -> AcceptanceRecorder:
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{number:2d}. {'PASS' if passed else 'FAIL'}  {title}  {detail}")
