import numpy as np
import pytest

from purilab.schedule import build_linear_schedule


@pytest.fixture(scope="session")
def schedule():
    return build_linear_schedule()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance bookkeeping: one line per criterion in the terminal summary
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def check(number, title, passed, detail=""):
        ACCEPTANCE[number] = (bool(passed), title, detail)
        assert passed, f"criterion {number} ({title}) failed: {detail}"
    return check


def pytest_terminal_summary(terminalreporter):
    failed = {
        int(rep.nodeid.split("test_criterion_")[1][:2])
        for rep in terminalreporter.stats.get("failed", [])
        if "test_criterion_" in rep.nodeid
    }
    for n in failed - set(ACCEPTANCE):
        ACCEPTANCE[n] = (False, "error before the check completed", "")
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {n:2d}  {title}  [{detail}]")
