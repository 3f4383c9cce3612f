import numpy as np
import pytest
from hypothesis import settings

from l96qhm.lorenz96 import SimConfig, TRUTH
from l96qhm.metrics_pca import build_observation_pack
from l96qhm.rng import RngStream

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

# small two-scale system that runs in milliseconds
SMALL = SimConfig(K=8, J=4, dt=0.005, spinup_mtu=1.0, avg_mtu=5.0)


@pytest.fixture(scope="session")
def small_cfg():
    return SMALL


@pytest.fixture(scope="session")
def small_pack():
    return build_observation_pack(TRUTH, SMALL, n_calib=60, rng=RngStream(3))


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    def report(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
