"""Lognormal random fields from a Nystrom-discretized KL expansion.

The Gaussian field has zero mean and a unit-variance Matern covariance on
``D = [0, 1]^2``. Eigenpairs of the covariance operator are approximated with
a tensor midpoint rule, and eigenfunctions are evaluated off the quadrature
nodes with the Nystrom interpolation formula.
"""
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma, kv

from mgmlqmc import core

__all__ = ['MaternParams', 'QuadratureGrid', 'KLExpansion', 'EigenSolverError',
           'SUPPORTED_NU', 'matern_cov', 'build_quadrature', 'build_kl',
           'field_basis', 'evaluate_field', 'sample_coefficient', 'save_kl',
           'load_kl', 'build_kl_cached']

SUPPORTED_NU = (0.5, 1.0, 1.5, 2.0, 2.5)
NEGATIVE_EIG_TOL = 1e-12
KL_CACHE_VERSION = 1


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class MaternParams:
    """Unit-variance Matern covariance with correlation length and smoothness."""
    corr_length: float
    nu: float

    def __post_init__(self):
        if not self.corr_length > 0:
            raise ValueError('correlation length must be positive')
        if float(self.nu) not in SUPPORTED_NU:
            raise ValueError(f'smoothness nu={self.nu} not in {SUPPORTED_NU}')

    def covariance(self, dist):
        """Covariance as a function of the Euclidean distance."""
        rho = np.asarray(dist, dtype=np.float64)/self.corr_length
        nu = float(self.nu)
        if nu == 0.5:
            return np.exp(-rho)
        if nu == 1.5:
            t = np.sqrt(3.0)*rho
            return (1.0 + t)*np.exp(-t)
        if nu == 2.5:
            t = np.sqrt(5.0)*rho
            return (1.0 + t + t*t/3.0)*np.exp(-t)
        # Integer smoothness: modified Bessel function of the second kind.
        t = np.sqrt(2.0*nu)*rho
        out = np.ones_like(t)
        pos = t > 1e-12
        tp = t[pos]
        out[pos] = 2.0**(1.0 - nu)/gamma(nu)*tp**nu*kv(nu, tp)
        return out


def matern_cov(params, x, xp):
    """Covariance between points ``x`` and ``xp`` (broadcast over leading axes)."""
    d = np.linalg.norm(np.asarray(x, float) - np.asarray(xp, float), axis=-1)
    return params.covariance(d)


@dataclass(frozen=True)
class QuadratureGrid:
    points: np.ndarray
    weights: np.ndarray

    @property
    def M(self):
        return self.weights.size


def build_quadrature(n_q):
    """Tensor midpoint rule with ``n_q**2`` nodes, x-index running fastest."""
    if n_q < 2:
        raise ValueError('need n_q >= 2')
    c = (np.arange(n_q) + 0.5)/n_q
    xx, yy = np.meshgrid(c, c, indexing='xy')
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return QuadratureGrid(pts, np.full(n_q*n_q, 1.0/(n_q*n_q)))


@dataclass(frozen=True)
class KLExpansion:
    """Truncated KL expansion.

    ``eigenvalues`` holds all ``M`` discrete eigenvalues in descending order;
    row ``j`` of ``eigenvectors`` is the orthonormal nodal vector
    ``sqrt(W) psi_j``. Only the first ``s`` pairs enter the field.
    """
    params: object
    grid: QuadratureGrid
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    s: int
    fraction: float
    sweeps: int = 0
    _coeffs: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        # Nystrom weights: psi_j(x) sqrt(theta_j) = sum_q C(x, x_q) coeff[q, j].
        th = self.eigenvalues[:self.s]
        if np.any(th <= 0):
            raise ValueError('retained eigenvalues must be positive')
        coeffs = (np.sqrt(self.grid.weights)[:, None]
                  * self.eigenvectors[:self.s].T / np.sqrt(th)[None, :])
        object.__setattr__(self, '_coeffs', coeffs)

    @property
    def captured(self):
        return float(np.sum(self.eigenvalues[:self.s])/np.sum(self.eigenvalues))

    @property
    def nodal_eigenfunctions(self):
        """``psi_j(x_k)`` at quadrature nodes, shape ``(s, M)``."""
        return self.eigenvectors[:self.s]/np.sqrt(self.grid.weights)[None, :]


def build_kl(params, grid, fraction=0.998, eigensolver='jacobi', tol=1e-12,
             max_sweeps=30):
    """Nystrom KL expansion of the covariance ``params.covariance``.

    Parameters
    ----------
    params : MaternParams or any object with ``covariance(dist)``
    grid : QuadratureGrid
    fraction : float
        Truncate at the smallest ``s`` capturing this share of the trace.
    eigensolver : {'jacobi', 'lapack'}
        Cyclic Jacobi (default) or ``numpy.linalg.eigh``.
    """
    x = grid.points
    dist = np.sqrt(((x[:, None, :] - x[None, :, :])**2).sum(-1))
    sigma = params.covariance(dist)
    if not np.all(np.isfinite(sigma)):
        raise ValueError('covariance matrix has non-finite entries')
    sw = np.sqrt(grid.weights)
    B = sw[:, None]*sigma*sw[None, :]
    B = 0.5*(B + B.T)

    sweeps = 0
    if eigensolver == 'jacobi':
        w, vt, sweeps, off = core.jacobi_eigh(B, tol, max_sweeps)
        if off > tol*np.linalg.norm(B):
            raise EigenSolverError(
                f'Jacobi did not converge in {max_sweeps} sweeps '
                f'(off-diagonal norm {off:.3e})')
    elif eigensolver == 'lapack':
        w, v = np.linalg.eigh(B)
        vt = v.T
    else:
        raise ValueError(f'unknown eigensolver {eigensolver!r}')

    order = np.argsort(w)[::-1]
    w = w[order]
    vt = np.ascontiguousarray(vt[order])
    if w[-1] < -NEGATIVE_EIG_TOL:
        raise EigenSolverError(f'eigenvalue {w[-1]:.3e} is significantly negative')
    w = np.where(w < 0.0, 0.0, w)

    csum = np.cumsum(w)
    s = int(np.searchsorted(csum, fraction*csum[-1]) + 1)
    s = min(s, w.size)
    return KLExpansion(params, grid, w, vt, s, float(fraction), sweeps)


def field_basis(kl, points, chunk=4096):
    """Matrix ``E[p, j] = sqrt(theta_j) psi_j(x_p)``, shape ``(P, s)``."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    xq = kl.grid.points
    out = np.empty((points.shape[0], kl.s))
    for start in range(0, points.shape[0], chunk):
        p = points[start:start + chunk]
        d = np.sqrt(((p[:, None, :] - xq[None, :, :])**2).sum(-1))
        out[start:start + chunk] = kl.params.covariance(d) @ kl._coeffs
    return out


def evaluate_field(kl, y, x):
    """Gaussian field ``z_s(x, y)``.

    ``y`` has shape ``(s,)`` or ``(batch, s)``; ``x`` is one point or an
    array of points. Returns values of shape ``(P,)`` or ``(batch, P)``.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != kl.s:
        raise ValueError(f'expected {kl.s} parameters, got {y.shape[-1]}')
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    E = field_basis(kl, np.atleast_2d(x))
    z = y @ E.T
    return z[..., 0] if single else z


def sample_coefficient(kl, y, points):
    """Lognormal coefficient ``exp(z_s)`` at the given points."""
    return np.exp(evaluate_field(kl, y, points))


# CACHE

def _cache_name(params, n_q, fraction, eigensolver):
    return (f'kl_lc{params.corr_length:g}_nu{params.nu:g}_nq{n_q}_'
            f'f{fraction:g}_{eigensolver}.npz')


def save_kl(kl, path):
    """Store the eigendecomposition as ``.npz`` (see docs/formats.md)."""
    tmp = f'{path}.tmp{os.getpid()}.npz'
    np.savez(tmp, version=KL_CACHE_VERSION,
             corr_length=kl.params.corr_length, nu=kl.params.nu,
             points=kl.grid.points, weights=kl.grid.weights,
             eigenvalues=kl.eigenvalues, eigenvectors=kl.eigenvectors,
             s=kl.s, fraction=kl.fraction, sweeps=kl.sweeps)
    os.replace(tmp, path)


def load_kl(path):
    with np.load(path) as f:
        if int(f['version']) != KL_CACHE_VERSION:
            raise ValueError(f'unsupported KL cache version in {path}')
        params = MaternParams(float(f['corr_length']), float(f['nu']))
        grid = QuadratureGrid(f['points'], f['weights'])
        return KLExpansion(params, grid, f['eigenvalues'], f['eigenvectors'],
                           int(f['s']), float(f['fraction']), int(f['sweeps']))


def build_kl_cached(params, n_q=24, fraction=0.998, cache_dir=None,
                    eigensolver='jacobi'):
    """``build_kl`` with an optional on-disk cache keyed by the inputs."""
    grid = build_quadrature(n_q)
    if cache_dir is None:
        return build_kl(params, grid, fraction, eigensolver)
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, _cache_name(params, n_q, fraction, eigensolver))
    if os.path.exists(path):
        try:
            return load_kl(path)
        except (OSError, ValueError, KeyError):
            pass
    kl = build_kl(params, grid, fraction, eigensolver)
    save_kl(kl, path)
    return kl
