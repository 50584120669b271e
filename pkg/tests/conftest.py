import os
import sys

import numpy as np
import pytest

from genchan import channel as C
from genchan.gce import GenerativePrior
from genchan.genprior import generator_spec, init_weights, load_weights

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
SMOKE_WEIGHTS = os.path.join(FIXTURES, "smoke_d8.ggw")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running trend checks")


def fd_gradient(f, x, h=1e-6):
    """Central differences of a scalar function of a real array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(np.ravel(a) - np.ravel(b)) / max(np.linalg.norm(np.ravel(b)), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_prior(n_r, n_t, d, channels, seed=0, dtype=np.float64, data_seed=5, count=200, std=0.02):
    """Untrained generator with normalization stats from a small dataset."""
    cfg = C.ChannelConfig(n_r=n_r, n_t=n_t)
    stats = C.compute_norm_stats(C.generate_dataset(cfg, count, seed=data_seed))
    spec = generator_spec(n_r, n_t, latent_dim=d, channels=channels)
    store = init_weights(spec, np.random.default_rng(seed), std=std, dtype=dtype)
    store.stats = stats
    return GenerativePrior(spec, store)


@pytest.fixture(scope="session")
def small_prior():
    return make_prior(4, 8, 3, 4, std=0.3)


@pytest.fixture(scope="session")
def smoke_prior():
    """The committed smoke-scale generator (4x16, d=8)."""
    if not os.path.isfile(SMOKE_WEIGHTS):
        # slow path: retrain with the same recipe as the committed file
        sys.path.insert(0, FIXTURES)
        from make_fixtures import build
        build(SMOKE_WEIGHTS)
    spec, store = load_weights(SMOKE_WEIGHTS)
    return GenerativePrior(spec, store)


ACCEPTANCE = {}


def report(criterion, passed, detail):
    """Record and print one acceptance line."""
    line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
