import pathlib

import pytest
import torch

torch.set_num_threads(1)

ROOT = pathlib.Path(__file__).resolve().parent.parent


@pytest.fixture(scope="session")
def samples_dir() -> pathlib.Path:
    path = ROOT / "assets" / "samples"
    if not path.is_dir():
        pytest.skip("bundled sample images not found")
    return path


# The release gate lives in test_acceptance.py; print one verdict line per
# criterion at the end of the run so the gate is readable at a glance.

_acceptance: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    failed_setup = report.when == "setup" and report.outcome != "passed"
    if report.when == "call" or failed_setup:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        verdict = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"{verdict:>6}  {name}")
