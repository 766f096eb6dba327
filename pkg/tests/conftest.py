import numpy as np
import pytest

from truncmilstein import TruncationPolicy, builtin_model


@pytest.fixture
def paper_model():
    return builtin_model("paper-example")


@pytest.fixture
def paper_policy():
    return TruncationPolicy.power(exponent=5, epsilon=0.1, delta_star=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_acceptance = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        props = dict(report.user_properties)
        _acceptance.append((props.get("criterion", report.nodeid), report.outcome,
                            props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in sorted(_acceptance):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  {detail}")
