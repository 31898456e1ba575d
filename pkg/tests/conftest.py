import pytest

_verdicts = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if report.skipped:
            status = "SKIP"
        else:
            status = "PASS" if report.passed else "FAIL"
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _verdicts.append((marker.args[0], marker.args[1], status, report.duration, detail))


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, status, duration, detail in sorted(_verdicts):
        line = f"{status} criterion {number}: {name} ({duration:.1f} s)"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
