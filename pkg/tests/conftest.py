import sys

import numpy as np
import pytest

from powerlmm.data import LongitudinalDataset


def toy_dataset(seed, n_ind=2, n_obs=3, sigma0=1.5, sigma=0.5, beta0=2.0):
    rng = np.random.default_rng(seed)
    ids, ts, ys = [], [], []
    for i in range(n_ind):
        b = rng.normal(0.0, sigma0)
        for t in range(n_obs):
            ids.append(f"i{i}")
            ts.append(float(t))
            ys.append(beta0 + b + rng.normal(0.0, sigma))
    return LongitudinalDataset.from_arrays(ids, ts, ys, label=f"toy{seed}")


@pytest.fixture
def toy():
    return toy_dataset(5)


@pytest.fixture
def two_series():
    return LongitudinalDataset.from_arrays(
        ["a"] * 4 + ["b"] * 3,
        [0, 1, 2, 3, 0, 1, 2],
        [1.0, 1.5, 0.7, 2.0, -0.3, 0.4, 0.1],
    )


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
