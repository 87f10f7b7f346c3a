"""Acceptance-criteria reporting: one PASS/FAIL line per criterion in the summary."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion test")


def pytest_runtest_logreport(report):
    number = dict(report.user_properties).get("criterion")
    if number is None:
        return
    if report.when == "call" or report.failed:
        props = dict(report.user_properties)
        prev = _RESULTS.get(number)
        passed = report.passed and (prev is None or prev[0])
        _RESULTS[number] = (passed, props.get("title", ""), props.get("detail", ""))


@pytest.fixture(autouse=True)
def _criterion_properties(request):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        number, title = marker.args
        request.node.user_properties.append(("criterion", number))
        request.node.user_properties.append(("title", title))


@pytest.fixture
def detail(request):
    """Call with a short measurement summary; shown next to the criterion's verdict."""
    def record(text):
        request.node.user_properties.append(("detail", text))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_RESULTS):
        passed, title, info = _RESULTS[number]
        verdict = "PASS" if passed else "FAIL"
        line = f"criterion {number}: {verdict}  {title}"
        terminalreporter.write_line(line + (f"  [{info}]" if info else ""))
