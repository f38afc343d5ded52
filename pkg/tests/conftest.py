import pytest

_OUTCOMES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when == "teardown":
        return
    number, title = marker.args
    failed = report.failed or (report.when == "setup" and report.skipped)
    if failed or report.when == "call":
        # a setup failure counts; a passing setup is settled by the call phase
        previous = _OUTCOMES.get(number, (title, "PASS"))[1]
        _OUTCOMES[number] = (title, "FAIL" if failed or previous == "FAIL" else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        title, verdict = _OUTCOMES[number]
        terminalreporter.write_line(f"{verdict} criterion {number:2d}: {title}")
