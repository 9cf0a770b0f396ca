"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""
import pytest

CRITERION_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    entry = CRITERION_RESULTS.setdefault(marker.args[0], {"passed": True, "detail": ""})
    entry["passed"] = entry["passed"] and report.passed
    for name, value in item.user_properties:
        if name == "detail":
            entry["detail"] = value


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERION_RESULTS):
        r = CRITERION_RESULTS[n]
        line = f"criterion {n:>2}: {'PASS' if r['passed'] else 'FAIL'}"
        if r["detail"]:
            line += f"  {r['detail']}"
        terminalreporter.write_line(line)
