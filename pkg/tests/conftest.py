import sys

import numpy as np
import pytest

from tradeslab.data import gen_synthetic
from tradeslab.ndcore import LayerSpec, Model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs():
    return gen_synthetic("blobs", 300, 7, separation=4.0)


def linear_model(w, b=0.0):
    w = np.asarray(w, dtype=np.float64)
    return Model((LayerSpec(w.size, 1),), np.concatenate([w, [b]]))


def finite_diff(fn, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn(x)
        flat[i] = old - h
        down = fn(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[number])
