from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.skipped:
        outcome = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        _acceptance[name] = (outcome, "")
    elif report.failed:
        _acceptance[name] = ("FAIL", report.when)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance, key=lambda n: int(n.split("_")[2])):
        outcome, _ = _acceptance[name]
        terminalreporter.write_line(f"{outcome} {name}")


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES
