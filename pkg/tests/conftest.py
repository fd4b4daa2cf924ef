import numpy as np
import pytest

from lipt.tensor import ConvWeights

_ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_conv(rng, c_out, c_in, k, groups=1, scale=0.5, dtype=np.float32):
    kernel = (rng.standard_normal((c_out, c_in // groups, k, k)) * scale).astype(dtype)
    bias = (rng.standard_normal(c_out) * scale).astype(dtype)
    return ConvWeights(kernel, bias, groups)


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _ACCEPTANCE[report.nodeid] = report.outcome
    elif "test_acceptance.py" in report.nodeid and report.failed:
        _ACCEPTANCE.setdefault(report.nodeid, "error")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in _ACCEPTANCE.items():
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {nodeid.split('::', 1)[1]}")
