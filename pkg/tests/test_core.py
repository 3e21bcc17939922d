import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgmlqmc import core

needs_numba = pytest.mark.skipif(not core.USE_NUMBA, reason='numba disabled')


def _grid(m, seed):
    rng = np.random.default_rng(seed)
    u = np.zeros((m + 1, m + 1))
    u[1:-1, 1:-1] = rng.standard_normal((m - 1, m - 1))
    b = np.zeros_like(u)
    b[1:-1, 1:-1] = rng.standard_normal((m - 1, m - 1))
    ax = np.exp(rng.standard_normal((m, m + 1)))
    ay = np.exp(rng.standard_normal((m + 1, m)))
    return u, b, ax, ay


def _sgs_reference(u, b, ax, ay, h2):
    """Plain lexicographic forward then backward Gauss-Seidel."""
    m = u.shape[0] - 1
    order = [(i, j) for j in range(1, m) for i in range(1, m)]
    for sweep in (order, order[::-1]):
        for i, j in sweep:
            e, w, n, s = ax[i, j], ax[i - 1, j], ay[i, j], ay[i, j - 1]
            u[i, j] = (h2*b[i, j] + e*u[i + 1, j] + w*u[i - 1, j]
                       + n*u[i, j + 1] + s*u[i, j - 1])/(e + w + n + s)
    return u


@pytest.mark.parametrize('variant', ['numpy', pytest.param('numba', marks=needs_numba)])
@pytest.mark.parametrize('m', [2, 4, 8, 16])
def test_sgs_matches_pointwise_reference(variant, m):
    kern = (core.NUMPY if variant == 'numpy' else core.NUMBA)['sgs_sweep']
    u, b, ax, ay = _grid(m, m)
    ref = _sgs_reference(u.copy(), b, ax, ay, 1.0/m**2)
    kern(u, b, ax, ay, 1.0/m**2)
    np.testing.assert_allclose(u, ref, rtol=1e-13, atol=1e-14)


@needs_numba
@settings(max_examples=20, deadline=None)
@given(k=st.integers(1, 5), seed=st.integers(0, 2**31))
def test_numba_and_numpy_kernels_agree(k, seed):
    m = 2**k
    u, b, ax, ay = _grid(m, seed)
    h2 = 1.0/m**2
    r1, r2 = np.zeros_like(u), np.zeros_like(u)
    core.NUMPY['residual'](u, b, ax, ay, h2, r1)
    core.NUMBA['residual'](u, b, ax, ay, h2, r2)
    np.testing.assert_allclose(r1, r2, rtol=1e-12, atol=1e-12)
    c1 = np.zeros((m//2 + 1, m//2 + 1))
    c2 = np.zeros_like(c1)
    core.NUMPY['restrict_fw'](r1, c1)
    core.NUMBA['restrict_fw'](r1, c2)
    np.testing.assert_allclose(c1, c2, rtol=1e-13, atol=1e-14)
    f1 = np.empty((2*m + 1, 2*m + 1))
    f2 = np.empty_like(f1)
    core.NUMPY['prolongate_bilinear'](u, f1)
    core.NUMBA['prolongate_bilinear'](u, f2)
    np.testing.assert_array_equal(f1, f2)
    v1, v2 = u.copy(), u.copy()
    core.NUMPY['sgs_sweep'](v1, b, ax, ay, h2)
    core.NUMBA['sgs_sweep'](v2, b, ax, ay, h2)
    np.testing.assert_allclose(v1, v2, rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize('variant', ['numpy', pytest.param('numba', marks=needs_numba)])
def test_jacobi_against_lapack(variant):
    rng = np.random.default_rng(5)
    A = rng.standard_normal((30, 30))
    A = A @ A.T
    w, vt, sweeps, off = (core.NUMPY if variant == 'numpy' else core.NUMBA)['jacobi_eigh'](A, 1e-12, 30)
    assert off <= 1e-12*np.linalg.norm(A)
    assert sweeps <= 15
    np.testing.assert_allclose(np.sort(w), np.linalg.eigvalsh(A), rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(vt @ vt.T, np.eye(30), atol=1e-12)
    np.testing.assert_allclose(vt.T @ np.diag(w) @ vt, A, atol=1e-9)


def test_jacobi_leaves_input_untouched():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    B = A.copy()
    w, vt, _, _ = core.jacobi_eigh(A, 1e-12, 30)
    np.testing.assert_array_equal(A, B)
    np.testing.assert_allclose(np.sort(w), [1.0, 3.0])


def test_jacobi_diagonal_input_needs_no_sweep():
    w, vt, sweeps, off = core.jacobi_eigh(np.diag([3.0, 1.0, 2.0]), 1e-12, 30)
    assert sweeps == 0 and off == 0.0
    np.testing.assert_array_equal(w, [3.0, 1.0, 2.0])
