import pytest

_CRITERIA: dict[int, tuple[str, str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not report.failed:
        return
    number, title = marker.args
    details = [str(v) for k, v in item.user_properties if k == "detail"]
    status = "PASS" if report.passed else "FAIL"
    prev = _CRITERIA.get(number)
    if prev and prev[1] == "FAIL":
        status = "FAIL"
    _CRITERIA[number] = (title, status, (prev[2] if prev else []) + details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, details = _CRITERIA[number]
        line = f"criterion {number} {status}: {title}"
        if details:
            line += " (" + "; ".join(details) + ")"
        terminalreporter.write_line(line)
