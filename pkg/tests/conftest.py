import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_CRITERIA = {}  # number -> [title, passed so far, detail lines]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, [title, True, []])
    if report.failed:
        entry[1] = False
        entry[2].append(item.name)
    elif report.when == "call" and report.skipped:
        entry[1] = False
        entry[2].append(f"{item.name} (skipped)")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, failed = _CRITERIA[number]
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}"
        if failed:
            line += f"  [failed: {', '.join(failed)}]"
        terminalreporter.write_line(line)
