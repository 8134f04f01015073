import numpy as np
import pytest

_criteria: list[tuple[str, str, float]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    failed_setup = report.when == "setup" and report.failed
    if report.when == "call" or failed_setup:
        _criteria.append((marker.args[0], "PASS" if report.passed else "FAIL", report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, secs in _criteria:
        terminalreporter.write_line(f"{status}  {name}  ({secs:.1f}s)")
