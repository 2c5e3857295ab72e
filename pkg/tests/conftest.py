import math

import numpy as np
import pytest

from lpvtube.bench import default_scenario, run_benchmark
from lpvtube.lpv import ClosedLoopModel, disk_model, sinc
from lpvtube.mpc import MpcConfig
from lpvtube.synthesis import robust_lpv_gain

DEFAULT_Q = np.diag([8.0, 0.1])
DEFAULT_R = np.array([[0.5]])


@pytest.fixture(scope="session")
def disk():
    return disk_model()


@pytest.fixture(scope="session")
def sinc_grid():
    return [np.array([sinc(t)]) for t in np.linspace(-2 * math.pi, 2 * math.pi, 41)]


@pytest.fixture(scope="session")
def synthesis(disk, sinc_grid):
    return robust_lpv_gain(disk, DEFAULT_Q, DEFAULT_R, sinc_grid)


@pytest.fixture(scope="session")
def closed_loop(disk, synthesis):
    return ClosedLoopModel(disk, synthesis.K)


@pytest.fixture(scope="session")
def mpc_cfg(synthesis):
    return MpcConfig(
        N=10, Q=DEFAULT_Q, R=DEFAULT_R, P=synthesis.P,
        state_lower=[-2 * math.pi, -10 * math.pi], state_upper=[2 * math.pi, 10 * math.pi],
        input_lower=[-10.0], input_upper=[10.0],
    )


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("default_run")
    summary = run_benchmark(default_scenario(), out_dir=out)
    assert summary.status == "ok", summary.error
    return summary, out


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion; echoed in the terminal summary."""

    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} ({title}): {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
