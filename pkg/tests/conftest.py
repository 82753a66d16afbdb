import os

import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def example_dataset():
    """Three values, ten users each; the top value's users demand epsilon 2."""
    from ahdp.dataset import Dataset

    return Dataset({(0.0, 0.0): 10, (1.0, 1.0): 10, (2.0, 2.0): 10})


_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rpartition("::")[2]
    if not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda n: int(n.split("_")[2])):
        verdict = "PASS" if _CRITERIA[name] == "passed" else "FAIL"
        number, _, label = name[len("test_criterion_"):].partition("_")
        terminalreporter.write_line(f"criterion {number:>2} {verdict}  {label.replace('_', ' ')}")
