import numpy as np
import pytest

from nlstokes.geometry import partition, sample_grid, unit_disk
from nlstokes.kernels import make_kernel

ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def disk():
    return unit_disk()


@pytest.fixture(scope="session")
def disk_cloud(disk):
    """Unit disk, delta=0.2, h=0.05: 1264 points, 448 interior."""
    return partition(sample_grid(disk, 0.05), 0.2)


@pytest.fixture(scope="session")
def disk_kernel():
    return make_kernel("quadratic", 0.2, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
