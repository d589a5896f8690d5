import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_outcomes = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        entry = _outcomes.setdefault(number, {"title": title, "passed": 0, "failed": 0, "notes": []})
        entry["passed" if report.passed else "failed"] += 1
        entry["notes"].extend(f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        entry = _outcomes[number]
        status = "PASS" if entry["failed"] == 0 else "FAIL"
        total = entry["passed"] + entry["failed"]
        line = f"[{status}] {number:>2}. {entry['title']} ({entry['passed']}/{total} tests)"
        if entry["notes"]:
            line += "  " + ", ".join(entry["notes"])
        terminalreporter.write_line(line)
