"""Shared fixtures, plus a per-criterion pass/fail summary for the acceptance suite."""

from __future__ import annotations

from collections import defaultdict

import pytest

_CRITERIA: dict[int, list[tuple[str, str]]] = defaultdict(list)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[int(marker.args[0])].append((item.name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        results = _CRITERIA[number]
        failed = [name for name, outcome in results if outcome != "passed"]
        status = "PASS" if not failed else "FAIL"
        detail = f"{len(results)} check(s)" if not failed else "failed: " + ", ".join(failed)
        terminalreporter.write_line(f"criterion {number}: {status} ({detail})")
