import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from mgmlqmc.experiments import variance_curve
from mgmlqmc.multigrid import CoefficientSample, GridHierarchy, fmg_solve
from mgmlqmc.rates import (estimate_rates, fit_rate, predicted_cost_reduction,
                           predicted_nsamples_shape, rates_row,
                           simulated_cost_ratio, speedups)

rate = st.floats(0.1, 6.0)


def test_fit_rate_exact():
    r, c = fit_rate([1/4, 1/8, 1/16], [1, 0.25, 0.0625])
    assert r == pytest.approx(2.0, abs=1e-12) and c == pytest.approx(16.0, rel=1e-12)
    assert fit_rate([1, 2, 4], [3, 3, 3])[0] == pytest.approx(0.0, abs=1e-14)


def test_fit_rate_noisy():
    rng = np.random.default_rng(0)
    h = 2.0**-np.arange(2, 9)
    y = 0.7*h**1.5*(1 + rng.uniform(-0.01, 0.01, h.size))
    assert fit_rate(h, y)[0] == pytest.approx(1.5, abs=0.05)


@pytest.mark.parametrize('x,y', [([1], [1]), ([1, 2], [1, 0]), ([1, 2], [1, -1]), ([1, 1], [1, 2])])
def test_fit_rate_errors(x, y):
    with pytest.raises(ValueError):
        fit_rate(x, y)


def synthetic_history(alpha, beta, gamma, L=6, h0=0.25, rho=2.0):
    h = h0*rho**-np.arange(L + 1)
    return {'h': h, 'mean': 0.3*h**alpha, 'var': 0.2*(h*rho)**beta,
            'cost': 5.0*h**-gamma}


def test_estimate_rates_simple_example():
    L = 5
    h = 0.25*2.0**-np.arange(L + 1)
    hist = {'h': h, 'mean': 4.0**-np.arange(L + 1), 'var': 4.0**-np.arange(L + 1),
            'cost': 4.0**np.arange(L + 1)}
    est = estimate_rates(hist)
    assert est.beta == pytest.approx(2.0, abs=1e-12)
    assert est.gamma == pytest.approx(2.0, abs=1e-12)
    assert math.isnan(est.lam)


@settings(max_examples=30, deadline=None)
@given(a=rate, b=rate, g=rate)
def test_rate_round_trip(a, b, g):
    est = estimate_rates(synthetic_history(a, b, g))
    assert est.alpha == pytest.approx(a, abs=1e-10)
    assert est.beta == pytest.approx(b, abs=1e-10)
    assert est.gamma == pytest.approx(g, abs=1e-10)
    assert est.c_alpha == pytest.approx(0.3, rel=1e-9)
    assert est.c_gamma == pytest.approx(5.0, rel=1e-9)
    assert est.residuals['beta'] <= 1e-10


def test_beta_fit_drops_pathological_level_zero():
    hist = synthetic_history(2, 2, 2)
    hist['var'] = np.array(hist['var'])
    hist['var'][0] = hist['var'][1]/3
    est = estimate_rates(hist)
    assert est.levels['beta'][0] == 1
    assert est.beta == pytest.approx(2.0, abs=1e-10)
    assert any('beta' in f for f in est.flags)


def test_too_few_levels():
    with pytest.raises(ValueError):
        estimate_rates(synthetic_history(2, 2, 2, L=1))


def test_lambda_from_mc_variance_law():
    rng = np.random.default_rng(11)
    L = 3
    hist = synthetic_history(2, 2, 2, L=L)
    curves = [variance_curve(rng.standard_normal((20, 1024))*4.0**-k) for k in range(L + 1)]
    hist['curves'] = curves
    est = estimate_rates(hist)
    assert 1/est.lam == pytest.approx(1.0, abs=0.15)
    assert est.levels['lambda'] == list(range(L + 1))


def test_lambda_skips_short_curves():
    hist = synthetic_history(2, 2, 2, L=2)
    hist['curves'] = [[(1, 1.0), (2, 0.5), (4, 0.25), (8, 0.125)], [(1, 1.0), (2, 0.5)], []]
    est = estimate_rates(hist)
    assert est.lam == pytest.approx(1.0, abs=1e-12)
    assert est.levels['lambda'] == [0]


def test_gamma_from_fmg_work_units():
    H = GridHierarchy(8)
    w = [fmg_solve(CoefficientSample.constant(H, k), k).work for k in range(7)]
    h = [H.h(k) for k in range(7)]
    g = -fit_rate(h[2:], w[2:])[0]
    assert 1.8 <= g <= 2.3


def test_cost_reduction_values():
    assert predicted_cost_reduction(2, 2, 1, 2) == pytest.approx(0.75, abs=1e-12)
    assert predicted_cost_reduction(2, 2, 0.5, 2) == pytest.approx(1 - 2**(-4/3), abs=1e-12)
    assert predicted_cost_reduction(2, 2, 0.5, 2) == pytest.approx(0.6031, abs=1e-4)
    assert predicted_cost_reduction(200, 200, 1, 2) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(b=rate, g=rate, lam=st.floats(0.05, 20), d=st.floats(0.05, 2.0), rho=st.floats(1.5, 4.0))
def test_cost_reduction_monotone_and_bounded(b, g, lam, d, rho):
    f = predicted_cost_reduction(b, g, lam, rho)
    assert 0 < f < 1
    assume(f < 1 - 1e-9)
    assert predicted_cost_reduction(b + d, g, lam, rho) > f
    assert predicted_cost_reduction(b, g + d, lam, rho) > f
    assert predicted_cost_reduction(b, g, lam + d, rho) > f


@pytest.mark.parametrize('args', [(0, 2, 1, 2), (2, 0, 1, 2), (2, 2, 0, 2), (2, 2, 1, 1.0)])
def test_cost_reduction_domain(args):
    with pytest.raises(ValueError):
        predicted_cost_reduction(*args)


def test_nsamples_shape():
    N = predicted_nsamples_shape(2, 2, 1, 2, L=5)
    assert N[0] == 1.0
    np.testing.assert_allclose(N[1:]/N[:-1], 0.25, rtol=1e-14)
    assert predicted_nsamples_shape(2, 2, 1, 2, L=0).tolist() == [1.0]
    big = predicted_nsamples_shape(2, 2, 1e12, 2, L=2)
    np.testing.assert_allclose(big[1]/big[0], 2.0**-4, rtol=1e-10)
    inf = predicted_nsamples_shape(2, 2, math.inf, 2, L=2)
    np.testing.assert_allclose(inf[1], 2.0**-4)
    with pytest.raises(ValueError):
        predicted_nsamples_shape(2, 2, 1, 2, L=-1)


def test_speedups():
    assert speedups(3, 3, 3) == (1.0, 1.0, 1.0)
    assert speedups(8, 4, 2) == (2.0, 4.0, 2.0)
    with pytest.raises(ValueError):
        speedups(1, 0, 1)


@settings(max_examples=50, deadline=None)
@given(c=st.lists(st.floats(1e-3, 1e9), min_size=3, max_size=3))
def test_speedup_identity(c):
    s1, s2, s3 = speedups(*c)
    assert s2 == pytest.approx(s1*s3, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(b=rate, g=rate, lam=st.floats(0.1, 5), L=st.integers(0, 12))
def test_untruncated_ratio_equals_formula(b, g, lam, L):
    sim = simulated_cost_ratio(b, g, lam, 2.0, L, truncate=False)
    assert sim == pytest.approx(predicted_cost_reduction(b, g, lam, 2.0), abs=1e-12)


@pytest.mark.parametrize('b,g,lam', [(1, 2, 0.5), (2, 2, 1), (1, 2, 1)])
def test_truncated_ratio_closed_form(b, g, lam):
    q = 2.0**(-(b + g)*lam/(lam + 1))
    L = 6
    NC = (q*2.0**g)**np.arange(L + 1)
    expected = ((1 - q)*NC[:-1].sum() + NC[-1])/NC.sum()
    assert simulated_cost_ratio(b, g, lam, 2.0, L) == pytest.approx(expected, rel=1e-13)


def test_rates_row_layout():
    from mgmlqmc.rates import RateEstimates
    est = RateEstimates(2.0, 2.0, 2.0, 1.0, 1, 1, 1, 1)
    assert rates_row(0.5, 2.0, est) == [0.5, 2.0, 2.0, 2.0, 2.0, 1.0, pytest.approx(0.75)]
