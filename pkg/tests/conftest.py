import numpy as np
import pytest

from spotfs.channel import ChannelTaps, TapStructure, quantize_profile, default_profile
from spotfs.grid import DdGrid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid8():
    return DdGrid(8, 8)


@pytest.fixture
def grid16():
    return DdGrid(16, 16)


@pytest.fixture
def taps8():
    # distinct taps that fit an 8 x 8 grid, including a negative Doppler
    return ChannelTaps(np.array([0, 1, 2, 3]), np.array([0, 1, -1, 2]), np.array([0.4, 0.3, 0.2, 0.1]))


@pytest.fixture
def taps16(grid16):
    return quantize_profile(default_profile(), grid16)


@pytest.fixture
def taps16_raw(grid16):
    return quantize_profile(default_profile(normalize_total_power=False), grid16)


@pytest.fixture
def st8(grid8, taps8):
    return TapStructure.build(grid8, taps8)


def random_taps(rng, grid, Q):
    """Q distinct random taps on ``grid`` with random positive variances."""
    keys = set()
    while len(keys) < Q:
        keys.add((int(rng.integers(0, grid.M)), int(rng.integers(-(grid.N // 2), grid.N // 2))))
    l, k = (np.array(x) for x in zip(*sorted(keys)))
    var = rng.uniform(0.1, 1.0, Q)
    return ChannelTaps(l, k, var / var.sum())


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
