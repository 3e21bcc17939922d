import numpy as np
import pytest

from mgmlqmc.problem import PDESampler
from mgmlqmc.random_field import MaternParams, build_kl_cached, build_quadrature, build_kl


@pytest.fixture(scope='session')
def kl_cache(tmp_path_factory):
    return str(tmp_path_factory.mktemp('kl_cache'))


@pytest.fixture(scope='session')
def smooth_kl(kl_cache):
    """lc=0.5, nu=2 at the default quadrature (36 terms)."""
    return build_kl_cached(MaternParams(0.5, 2.0), 24, cache_dir=kl_cache)


@pytest.fixture(scope='session')
def small_kl():
    """Cheap expansion for tests that only need some valid field."""
    return build_kl(MaternParams(0.5, 1.5), build_quadrature(8))


@pytest.fixture
def smooth_sampler(smooth_kl):
    return PDESampler(smooth_kl, max_level=6)


class StubSampler:
    """Analytic sampler: ``F_k(y) = g(y) + c * 4**-k * (1 + y_1)``.

    ``E[F_k] = E[g] + c 4**-k``; with ``g(y) = y_1 + 0.5 y_2**2`` the limit has
    mean 0.5 and ``F_k`` is smooth in ``y``.
    """

    def __init__(self, s=2, c=0.1, max_level=8, work0=10.0):
        self.s = s
        self.c = c
        self.max_level = max_level
        self.work0 = work0
        self.calls = []

    def exact(self, level):
        return 0.5 + self.c*4.0**-level

    def solve(self, level, Y):
        Y = np.atleast_2d(Y)
        k = np.arange(level + 1)
        g = Y[:, 0] + 0.5*Y[:, 1]**2
        F = g[:, None] + self.c*4.0**-k[None, :]*(1.0 + Y[:, :1])
        self.calls.append((level, Y.shape[0]))
        return F, np.full(Y.shape[0], self.work0*4.0**level)


@pytest.fixture
def stub():
    return StubSampler()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section('acceptance criteria')
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
