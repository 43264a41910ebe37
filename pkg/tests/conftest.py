import os
from pathlib import Path

import numpy as np
import pytest

from pailab import data, nn

FIXTURES = Path(__file__).parent / "fixtures"


def central_fd_grad(loss_fn, theta, step=1e-4):
    """Central finite-difference gradient, one coordinate at a time."""
    theta = np.array(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + step
        up = loss_fn(theta)
        theta[i] = old - step
        down = loss_fn(theta)
        theta[i] = old
        out[i] = (up - down) / (2 * step)
    return out


def max_rel_err(a, b):
    """max|a - b| / max|b| (norm-wise, robust to exactly-zero coordinates)."""
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_fixture():
    return data.load_mnist(FIXTURES / "mnist1k-images-idx3-ubyte",
                           FIXTURES / "mnist1k-labels-idx1-ubyte", name="mnist1k")


@pytest.fixture(scope="session")
def blobs():
    return data.synth_blobs(4, 60, 12, 6.0, seed=7)


@pytest.fixture
def small_specs():
    return nn.mlp_specs([12, 16, 8, 4])


def mnist_dir():
    d = data.data_dir()
    if not (d / "train-images-idx3-ubyte").exists():
        return None
    return d


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)
