"""Rate fits and the cost model behind sample recycling.

Rates follow the usual multilevel conventions: ``|E[F_l - F_{l-1}]| ~ h_l^alpha``,
``V[F_l - F_{l-1}] ~ h_{l-1}^beta``, ``C_l ~ h_l^-gamma`` and, for the
randomized lattice rule, ``V[Ybar_l] ~ N_l^(-1/lambda)``.
"""
import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = ['RateEstimates', 'fit_rate', 'estimate_rates',
           'predicted_cost_reduction', 'predicted_nsamples_shape', 'speedups',
           'simulated_cost_ratio', 'RATES_HEADER', 'rates_row']

RATES_HEADER = ['lc', 'nu', 'alpha', 'beta', 'gamma', 'lambda',
                'predicted_reduction']
MIN_LAMBDA_POINTS = 4


def fit_rate(x, y, full=False):
    """Least-squares slope and prefactor of ``y = c * x**rate``.

    With ``full=True`` the residual norm of the log-log fit is returned as a
    third element.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size:
        raise ValueError('x and y differ in length')
    if y.size < 2:
        raise ValueError('need at least two points')
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError('log-log fit needs positive data')
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise ValueError('abscissae coincide')
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    if full:
        res = float(np.linalg.norm(A @ np.array([slope, icpt]) - ly))
        return float(slope), float(math.exp(icpt)), res
    return float(slope), float(math.exp(icpt))


@dataclass
class RateEstimates:
    alpha: float
    beta: float
    gamma: float
    lam: float
    c_alpha: float
    c_beta: float
    c_gamma: float
    c_lambda: float
    residuals: dict = field(default_factory=dict)
    levels: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def estimate_rates(history):
    """Fit alpha, beta, gamma and lambda from per-level statistics.

    ``history`` is a mapping with per-level sequences ``h`` (mesh widths),
    ``mean`` (``E[F_l - F_{l-1}]``), ``var`` (``V[F_l - F_{l-1}]``), ``cost``
    and optionally ``curves``: per level a list of ``(N, V[Ybar_l])`` pairs.
    Level 0 enters the bias fit only through ``h``; for the variance fit it is
    dropped when ``var[0] < var[1]``.
    """
    h = np.asarray(history['h'], dtype=np.float64)
    L = h.size - 1
    if L < 2:
        raise ValueError('rate estimation needs at least three levels')
    mean = np.abs(np.asarray(history['mean'], dtype=np.float64))
    var = np.asarray(history['var'], dtype=np.float64)
    cost = np.asarray(history['cost'], dtype=np.float64)
    rho = h[0]/h[1]
    flags, residuals, levels = [], {}, {}

    lv = np.arange(1, L + 1)
    lv = lv[mean[lv] > 0]
    alpha, c_alpha, residuals['alpha'] = fit_rate(h[lv], mean[lv], full=True)
    levels['alpha'] = lv.tolist()

    lv = np.arange(0, L + 1)
    if var[0] < var[1]:
        lv = lv[1:]
        flags.append('level 0 excluded from beta fit')
    lv = lv[var[lv] > 0]
    h_prev = h[lv]*rho
    beta, c_beta, residuals['beta'] = fit_rate(h_prev, var[lv], full=True)
    levels['beta'] = lv.tolist()

    slope, c_gamma, residuals['gamma'] = fit_rate(h, cost, full=True)
    gamma = -slope
    levels['gamma'] = list(range(L + 1))

    lam, c_lambda = math.nan, math.nan
    curves = history.get('curves')
    if curves:
        lams, cs, used = [], [], []
        for ell, curve in enumerate(curves):
            pts = [(n, v) for n, v in curve if n > 0 and v > 0]
            if len(pts) < MIN_LAMBDA_POINTS:
                continue
            n, v = np.array(pts).T
            s, c = fit_rate(n, v)
            if s >= 0:
                flags.append(f'level {ell}: variance does not decay with N')
                continue
            lams.append(-1.0/s)
            cs.append(c/var[ell] if var[ell] > 0 else math.nan)
            used.append(ell)
        if lams:
            lam = float(np.mean(lams))
            c_lambda = float(np.nanmean(cs)) if np.any(np.isfinite(cs)) else math.nan
            levels['lambda'] = used
            residuals['lambda_spread'] = float(np.std(lams))
    return RateEstimates(alpha, beta, gamma, lam, c_alpha, c_beta, c_gamma,
                         c_lambda, residuals, levels, flags)


def _check_rates(beta, gamma, lam, rho):
    if not (beta > 0 and gamma > 0 and lam > 0):
        raise ValueError('beta, gamma and lambda must be positive')
    if not rho > 1:
        raise ValueError('refinement factor must exceed one')


def predicted_cost_reduction(beta, gamma, lam, rho=2.0):
    """Cost of the recycled estimator relative to the plain one.

    Valid for sample counts following the optimal geometric decay, with the
    finest level's own samples reduced by the (virtual) next level as well.
    """
    _check_rates(beta, gamma, lam, rho)
    if math.isinf(lam):
        return 1.0 - rho**(-(beta + gamma))
    return 1.0 - rho**(-(beta + gamma)*lam/(lam + 1.0))


def predicted_nsamples_shape(beta, gamma, lam, rho=2.0, L=0):
    """Optimal ``N_l`` up to the unknown prefactor, normalized to ``N_0 = 1``."""
    _check_rates(beta, gamma, lam, rho)
    if L < 0:
        raise ValueError('L must be nonnegative')
    expo = 1.0 if math.isinf(lam) else lam/(lam + 1.0)
    q = rho**(-(beta + gamma)*expo)
    return q**np.arange(L + 1)


def simulated_cost_ratio(beta, gamma, lam, rho=2.0, L=6, truncate=True):
    """Recycled over plain cost for ``N_l`` of optimal shape and ``C_l = h_l^-gamma``.

    The recycled estimator computes ``N_l - N_{l+1}`` fresh solves on level
    ``l``. With ``truncate`` the finest level has no level above it and pays
    for all of its ``N_L`` samples; without it the schedule is continued to
    ``N_{L+1}`` as if further levels existed.
    """
    N = predicted_nsamples_shape(beta, gamma, lam, rho, L + 1)
    C = rho**(gamma*np.arange(L + 2))
    plain = float(np.sum(N[:L + 1]*C[:L + 1]))
    above = np.append(N[1:L + 1], 0.0 if truncate else N[L + 1])
    fresh = N[:L + 1] - above
    return float(np.sum(fresh*C[:L + 1]))/plain


def speedups(cost_mlmc, cost_mlqmc, cost_mgmlqmc):
    """``(S1, S2, S3)``: MLQMC over MLMC, MG-MLQMC over MLMC, MG-MLQMC over MLQMC."""
    c = [float(cost_mlmc), float(cost_mlqmc), float(cost_mgmlqmc)]
    if min(c) <= 0:
        raise ValueError('costs must be positive')
    s1 = c[0]/c[1]
    s3 = c[1]/c[2]
    return s1, s1*s3, s3


def rates_row(lc, nu, est, rho=2.0):
    """CSV row matching :data:`RATES_HEADER`."""
    try:
        red = predicted_cost_reduction(est.beta, est.gamma, est.lam, rho)
    except ValueError:
        red = math.nan
    return [lc, nu, est.alpha, est.beta, est.gamma, est.lam, red]
