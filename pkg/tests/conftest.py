"""Collects acceptance verdicts and prints one line per criterion at the end
of the session."""

import pytest

_VERDICTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if report.failed and not detail:
        detail = report.longreprtext.strip().splitlines()[-1] if report.longreprtext else "failed"
    _VERDICTS[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, status, detail = _VERDICTS[number]
        terminalreporter.write_line(f"{status} criterion {number:>2} {title}: {detail}")
