import time
from dataclasses import replace

import pytest

from shipmpc.config import default_config
from shipmpc.sim import metrics, run_open_loop

ACCEPTANCE_LINES = []
RUN_SECONDS = {}


def _timed_run(name, cfg):
    t0 = time.perf_counter()
    trace = run_open_loop(cfg)
    RUN_SECONDS[name] = time.perf_counter() - t0
    return trace, metrics(trace, cfg)


@pytest.fixture(scope="session")
def reference_cfg():
    return default_config()


@pytest.fixture(scope="session")
def case2_cfg(reference_cfg):
    return replace(reference_cfg, mpc=replace(reference_cfg.mpc, soc_final=0.7))


@pytest.fixture(scope="session")
def case1_run(reference_cfg):
    return _timed_run("case1", reference_cfg)


@pytest.fixture(scope="session")
def case2_run(case2_cfg):
    return _timed_run("case2", case2_cfg)


@pytest.fixture(scope="session")
def hold_cfg(reference_cfg):
    return replace(reference_cfg,
                   control=replace(reference_cfg.control, battery_reference="hold"))


@pytest.fixture(scope="session")
def hold_run(hold_cfg):
    return _timed_run("hold", hold_cfg)


@pytest.fixture(scope="session")
def run_seconds():
    return RUN_SECONDS


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for a criterion and print it."""

    def record(number, title, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}  [{detail}]"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split(":")[0].split()[1]):
            terminalreporter.write_line(line)
