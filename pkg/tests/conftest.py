from __future__ import annotations

import numpy as np
import pytest

_ACCEPTANCE: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _ACCEPTANCE.setdefault(number, {"title": title, "outcome": None, "nodeid": item.nodeid})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    entry = _ACCEPTANCE[mark.args[0]]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        entry["outcome"] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    ran = {k: v for k, v in _ACCEPTANCE.items() if v["outcome"] is not None}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ran):
        entry = ran[number]
        terminalreporter.write_line(f"{entry['outcome']}  criterion {number:2d}: {entry['title']}")
    passed = sum(v["outcome"] == "PASS" for v in ran.values())
    terminalreporter.write_line(f"{passed}/{len(ran)} acceptance criteria passed")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
