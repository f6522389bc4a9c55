import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_acceptance: dict = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    failed = report.failed
    if report.when == "call" or failed:
        number, title = marker
        prev = _acceptance.get(number)
        _acceptance[number] = (title, "FAIL" if failed or (prev and prev[1] == "FAIL") else "PASS", report.duration)


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    mark = item.get_closest_marker("acceptance")
    if mark is not None:
        report.acceptance = (mark.args[0], mark.args[1])
    return report


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, outcome, duration = _acceptance[number]
        terminalreporter.write_line(f"AC{number} {title}: {outcome} ({duration:.2f}s)")
