"""Collects ``acceptance`` marker outcomes and prints one verdict line each."""

import pytest

_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    failed = rep.failed or (rep.when == "call" and rep.skipped)
    prev = _VERDICTS.get(number, (title, True))
    if rep.when == "call" or failed:
        _VERDICTS[number] = (title, prev[1] and not failed)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, ok = _VERDICTS[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:>2}  {title}")
