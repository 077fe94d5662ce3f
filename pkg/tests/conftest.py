import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from tet.image import GrayImage

ACCEPTANCE_LINES = []


def textured(h=64, w=64, seed=0, sigma=1.5, amplitude=0.15):
    rng = np.random.default_rng(seed)
    n = gaussian_filter(rng.standard_normal((h, w)), sigma)
    n /= n.std()
    return np.clip(0.5 + amplitude * n, 0.0, 1.0)


@pytest.fixture
def texture():
    return GrayImage(textured())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
