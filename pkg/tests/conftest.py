import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from maskdp.data import GeneratorConfig, generate_split  # noqa: E402

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    number, title = crit
    ok, titles = _criteria.get(number, (True, title))
    _criteria[number] = (ok and report.passed, titles)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        ok, title = _criteria[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def default_split():
    return generate_split(GeneratorConfig(), 0, 1000)


@pytest.fixture(scope="session")
def small_split():
    return generate_split(GeneratorConfig(n=400), 7, 200)
