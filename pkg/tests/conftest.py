import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one pass/fail line per acceptance criterion at the end of the run
_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _ACCEPTANCE[report.nodeid] = report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for report in _ACCEPTANCE.values():
        props = dict(report.user_properties)
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        label = props.get("criterion", report.nodeid.split("::")[-1])
        terminalreporter.write_line(f"{status}  {label}: {props.get('measured', '')}")
