"""Computational kernels.

Every kernel exists twice: a numba-jitted loop version and a pure-numpy
version. The public names bind to the numba version when it is available (see
:mod:`mgmlqmc._accel`); both variants stay importable through ``NUMPY`` and
``NUMBA`` for tests and benchmarks.

Grid conventions used throughout: a level with ``m`` cells per direction
stores nodal arrays of shape ``(m+1, m+1)`` including the (zero) Dirichlet
boundary, first index along x. Coefficients live on edge midpoints:
``ax[i, j] = a((i+1/2)h, jh)`` with shape ``(m, m+1)`` and
``ay[i, j] = a(ih, (j+1/2)h)`` with shape ``(m+1, m)``.
"""
import numpy as np

from mgmlqmc._accel import USE_NUMBA, njit

__all__ = ['sgs_sweep', 'residual', 'restrict_fw', 'prolongate_bilinear',
           'jacobi_eigh', 'NUMPY', 'NUMBA', 'USE_NUMBA']


# SYMMETRIC GAUSS-SEIDEL

def _sgs_sweep_np(u, b, ax, ay, h2):
    """Lexicographic forward + backward Gauss-Seidel, in place.

    For the 5-point stencil a lexicographic pass equals a pass over the
    anti-diagonals ``i + j = d`` in increasing ``d`` (points on one diagonal
    are decoupled), which is what gets vectorized here.
    """
    m = u.shape[0] - 1
    for ii, jj in _diagonals(m):
        _relax_points(u, b, ax, ay, h2, ii, jj)
    for ii, jj in reversed(_diagonals(m)):
        _relax_points(u, b, ax, ay, h2, ii, jj)


def _relax_points(u, b, ax, ay, h2, ii, jj):
    e = ax[ii, jj]
    w = ax[ii - 1, jj]
    n = ay[ii, jj]
    s = ay[ii, jj - 1]
    u[ii, jj] = (h2*b[ii, jj] + e*u[ii + 1, jj] + w*u[ii - 1, jj]
                 + n*u[ii, jj + 1] + s*u[ii, jj - 1]) / (e + w + n + s)


_DIAGONALS = {}


def _diagonals(m):
    if m not in _DIAGONALS:
        diags = []
        for d in range(2, 2*m - 1):
            i = np.arange(max(1, d - m + 1), min(m - 1, d - 1) + 1)
            diags.append((i, d - i))
        _DIAGONALS[m] = diags
    return _DIAGONALS[m]


@njit
def _sgs_sweep_nb(u, b, ax, ay, h2):
    m = u.shape[0] - 1
    for i in range(1, m):
        for j in range(1, m):
            e = ax[i, j]
            w = ax[i - 1, j]
            n = ay[i, j]
            s = ay[i, j - 1]
            u[i, j] = (h2*b[i, j] + e*u[i + 1, j] + w*u[i - 1, j]
                       + n*u[i, j + 1] + s*u[i, j - 1]) / (e + w + n + s)
    for i in range(m - 1, 0, -1):
        for j in range(m - 1, 0, -1):
            e = ax[i, j]
            w = ax[i - 1, j]
            n = ay[i, j]
            s = ay[i, j - 1]
            u[i, j] = (h2*b[i, j] + e*u[i + 1, j] + w*u[i - 1, j]
                       + n*u[i, j + 1] + s*u[i, j - 1]) / (e + w + n + s)


# RESIDUAL

def _residual_np(u, b, ax, ay, h2, r):
    """r = b - A u on the interior; boundary of ``r`` is set to zero."""
    c = u[1:-1, 1:-1]
    au = (ax[1:, 1:-1]*(c - u[2:, 1:-1]) + ax[:-1, 1:-1]*(c - u[:-2, 1:-1])
          + ay[1:-1, 1:]*(c - u[1:-1, 2:]) + ay[1:-1, :-1]*(c - u[1:-1, :-2]))
    r[...] = 0.0
    r[1:-1, 1:-1] = b[1:-1, 1:-1] - au/h2


@njit
def _residual_nb(u, b, ax, ay, h2, r):
    m = u.shape[0] - 1
    r[0, :] = 0.0
    r[m, :] = 0.0
    r[:, 0] = 0.0
    r[:, m] = 0.0
    for i in range(1, m):
        for j in range(1, m):
            c = u[i, j]
            au = (ax[i, j]*(c - u[i + 1, j]) + ax[i - 1, j]*(c - u[i - 1, j])
                  + ay[i, j]*(c - u[i, j + 1]) + ay[i, j - 1]*(c - u[i, j - 1]))
            r[i, j] = b[i, j] - au/h2


# GRID TRANSFER

def _restrict_fw_np(rf, rc):
    """Full weighting onto the coarse interior; coarse boundary set to zero."""
    c = rf[2:-1:2, 2:-1:2]
    edges = (rf[1:-2:2, 2:-1:2] + rf[3::2, 2:-1:2]
             + rf[2:-1:2, 1:-2:2] + rf[2:-1:2, 3::2])
    corners = (rf[1:-2:2, 1:-2:2] + rf[1:-2:2, 3::2]
               + rf[3::2, 1:-2:2] + rf[3::2, 3::2])
    rc[...] = 0.0
    rc[1:-1, 1:-1] = (4.0*c + 2.0*edges + corners)/16.0


@njit
def _restrict_fw_nb(rf, rc):
    mc = rc.shape[0] - 1
    rc[0, :] = 0.0
    rc[mc, :] = 0.0
    rc[:, 0] = 0.0
    rc[:, mc] = 0.0
    for ic in range(1, mc):
        i = 2*ic
        for jc in range(1, mc):
            j = 2*jc
            c = rf[i, j]
            edges = rf[i - 1, j] + rf[i + 1, j] + rf[i, j - 1] + rf[i, j + 1]
            corners = (rf[i - 1, j - 1] + rf[i - 1, j + 1]
                       + rf[i + 1, j - 1] + rf[i + 1, j + 1])
            rc[ic, jc] = (4.0*c + 2.0*edges + corners)/16.0


def _prolongate_bilinear_np(ec, ef):
    """Bilinear interpolation of a full coarse nodal array into ``ef``."""
    ef[::2, ::2] = ec
    ef[1::2, ::2] = 0.5*(ec[:-1, :] + ec[1:, :])
    ef[::2, 1::2] = 0.5*(ec[:, :-1] + ec[:, 1:])
    ef[1::2, 1::2] = 0.25*(ec[:-1, :-1] + ec[1:, :-1] + ec[:-1, 1:] + ec[1:, 1:])


@njit
def _prolongate_bilinear_nb(ec, ef):
    mc = ec.shape[0] - 1
    for ic in range(mc + 1):
        for jc in range(mc + 1):
            ef[2*ic, 2*jc] = ec[ic, jc]
    for ic in range(mc):
        for jc in range(mc + 1):
            ef[2*ic + 1, 2*jc] = 0.5*(ec[ic, jc] + ec[ic + 1, jc])
    for ic in range(mc + 1):
        for jc in range(mc):
            ef[2*ic, 2*jc + 1] = 0.5*(ec[ic, jc] + ec[ic, jc + 1])
    for ic in range(mc):
        for jc in range(mc):
            ef[2*ic + 1, 2*jc + 1] = 0.25*(ec[ic, jc] + ec[ic + 1, jc]
                                           + ec[ic, jc + 1] + ec[ic + 1, jc + 1])


# CYCLIC JACOBI EIGENSOLVER

def _jacobi_eigh_np(a, tol, max_sweeps):
    """Cyclic Jacobi on a symmetric matrix, rows vectorized.

    Returns ``(w, vt, sweeps, off)`` with eigenvectors in the rows of ``vt``;
    ``off`` is the final off-diagonal Frobenius norm.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    vt = np.eye(n)
    target = tol*np.sqrt(np.sum(a*a))
    skip = target/max(n, 1)/10.0
    off = _offdiag_norm_np(a)
    sweeps = 0
    while off > target and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                c, s, t, tau = _rotation(a[p, p], a[q, q], apq)
                rp = a[p].copy()
                rq = a[q].copy()
                a[p] = rp - s*(rq + tau*rp)
                a[q] = rq + s*(rp - tau*rq)
                a[:, p] = a[p]
                a[:, q] = a[q]
                a[p, p] = rp[p] - t*apq
                a[q, q] = rq[q] + t*apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = vt[p].copy()
                vq = vt[q]
                vt[p] = vp - s*(vq + tau*vp)
                vt[q] = vq + s*(vp - tau*vq)
        sweeps += 1
        off = _offdiag_norm_np(a)
    return np.diag(a).copy(), vt, sweeps, off


def _offdiag_norm_np(a):
    off = a - np.diag(np.diag(a))
    return np.sqrt(np.sum(off*off))


def _rotation(app, aqq, apq):
    theta = (aqq - app)/(2.0*apq)
    if abs(theta) > 1e150:
        t = 0.5/theta
    else:
        t = 1.0/(abs(theta) + np.sqrt(theta*theta + 1.0))
        if theta < 0.0:
            t = -t
    c = 1.0/np.sqrt(t*t + 1.0)
    s = t*c
    return c, s, t, s/(1.0 + c)


@njit
def _jacobi_eigh_nb(a, tol, max_sweeps):
    a = a.copy()
    n = a.shape[0]
    vt = np.eye(n)
    fro = 0.0
    for i in range(n):
        for j in range(n):
            fro += a[i, j]*a[i, j]
    target = tol*np.sqrt(fro)
    skip = target/max(n, 1)/10.0
    off = _offdiag_norm_nb(a)
    sweeps = 0
    rp = np.empty(n)
    rq = np.empty(n)
    while off > target and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                theta = (a[q, q] - a[p, p])/(2.0*apq)
                if abs(theta) > 1e150:
                    t = 0.5/theta
                else:
                    t = 1.0/(abs(theta) + np.sqrt(theta*theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0/np.sqrt(t*t + 1.0)
                s = t*c
                tau = s/(1.0 + c)
                app = a[p, p]
                aqq = a[q, q]
                for k in range(n):
                    rp[k] = a[p, k]
                    rq[k] = a[q, k]
                for k in range(n):
                    x = rp[k]
                    y = rq[k]
                    a[p, k] = x - s*(y + tau*x)
                    a[q, k] = y + s*(x - tau*y)
                for k in range(n):
                    a[k, p] = a[p, k]
                    a[k, q] = a[q, k]
                a[p, p] = app - t*apq
                a[q, q] = aqq + t*apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    x = vt[p, k]
                    y = vt[q, k]
                    vt[p, k] = x - s*(y + tau*x)
                    vt[q, k] = y + s*(x - tau*y)
        sweeps += 1
        off = _offdiag_norm_nb(a)
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, vt, sweeps, off


@njit
def _offdiag_norm_nb(a):
    n = a.shape[0]
    acc = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                acc += a[i, j]*a[i, j]
    return np.sqrt(acc)


NUMPY = {
    'sgs_sweep': _sgs_sweep_np,
    'residual': _residual_np,
    'restrict_fw': _restrict_fw_np,
    'prolongate_bilinear': _prolongate_bilinear_np,
    'jacobi_eigh': _jacobi_eigh_np,
}

NUMBA = {
    'sgs_sweep': _sgs_sweep_nb,
    'residual': _residual_nb,
    'restrict_fw': _restrict_fw_nb,
    'prolongate_bilinear': _prolongate_bilinear_nb,
    'jacobi_eigh': _jacobi_eigh_nb,
} if USE_NUMBA else {}

_ACTIVE = NUMBA if USE_NUMBA else NUMPY

sgs_sweep = _ACTIVE['sgs_sweep']
residual = _ACTIVE['residual']
restrict_fw = _ACTIVE['restrict_fw']
prolongate_bilinear = _ACTIVE['prolongate_bilinear']
jacobi_eigh = _ACTIVE['jacobi_eigh']
