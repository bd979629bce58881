"""Collects acceptance-criterion outcomes and prints one PASS/FAIL line per criterion."""

import pytest

_criteria: dict[int, tuple[str, list[bool]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): test belongs to an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    _, results = _criteria.setdefault(number, (title, []))
    if report.when == "call":
        results.append(report.passed)
    elif report.failed or report.skipped:
        results.append(False)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        title, results = _criteria[number]
        status = "PASS" if results and all(results) else "FAIL"
        terminalreporter.write_line(f"AC{number:<2} {status}  {title}")
