import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._criteria = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    n, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    ok = call.excinfo is None
    if not ok and not detail:
        detail = call.excinfo.exconly().splitlines()[0][:160]
    item.config._criteria[n] = f"criterion {n} {title}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()


def pytest_terminal_summary(terminalreporter, config):
    if config._criteria:
        terminalreporter.section("acceptance criteria")
        for n in sorted(config._criteria):
            terminalreporter.write_line(config._criteria[n])
