import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


# ---------------------------------------------------------------- acceptance summary
# Tests marked ``criterion(n, ref)`` get one summary line each at the end of
# the run; ``record_property("detail", ...)`` adds the measured values.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, ref): acceptance criterion and its manifest id")


def pytest_runtest_logreport(report):
    marker = report.__dict__.get("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        detail = dict(report.user_properties).get("detail", "")
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        _CRITERIA[marker] = (status, detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (number, ref), (status, detail) in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"criterion {number:2d} {status} [{ref}] {detail}".rstrip())
