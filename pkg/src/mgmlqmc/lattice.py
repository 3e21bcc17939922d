"""Randomly shifted rank-1 lattice sequences and the map to normal variates.

Points are produced in radical-inverse order, so that every prefix of length
``2**p`` is the full rank-1 lattice with ``N = 2**p`` points. This is what the
doubling strategy of the adaptive estimator relies on.
"""
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.special import erfc

__all__ = ['LatticeRule', 'ShiftSet', 'load_generating_vector', 'default_rule',
           'radical_inverse', 'lattice_point', 'lattice_points',
           'shifted_point', 'shifted_points', 'draw_shifts', 'uniform_shift',
           'map_to_normal', 'normal_cdf', 'counter_rng']

DEFAULT_VECTOR = 'lattice-33002-1024-1048576.9125.txt'

# Stream tags for the counter-based generator; keep shifts and MC samples
# in disjoint key spaces.
STREAM_SHIFT = 0
STREAM_MC = 1


@dataclass(frozen=True)
class LatticeRule:
    """Extensible rank-1 lattice rule in base 2.

    Parameters
    ----------
    z : ndarray of uint64
        Generating vector, one odd component per dimension.
    m : int
        The sequence is defined for indices ``0 <= n < 2**m``.
    """
    z: np.ndarray
    m: int

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.uint64).ravel()
        object.__setattr__(self, 'z', z)
        z.setflags(write=False)
        if self.m < 1 or z.size < 1:
            raise ValueError('need m >= 1 and at least one dimension')
        if np.any(z % 2 == 0) or np.any(z < 1) or np.any(z >= 2**self.m):
            raise ValueError('generating vector components must be odd and '
                             'in [1, 2**m)')

    @property
    def s(self):
        return self.z.size

    @property
    def n_max(self):
        return 2**self.m

    def truncate(self, s):
        """Rule restricted to the first ``s`` dimensions."""
        if s > self.s:
            raise ValueError(f'generating vector has only {self.s} '
                             f'dimensions, {s} requested')
        return LatticeRule(self.z[:s], self.m)


def load_generating_vector(path=None, s=None):
    """Read a generating-vector file.

    File format: plain text, one integer per line; the first line is ``m``,
    the second the number of dimensions stored, followed by the components.
    Without ``path`` the embedded order-2 weights vector (9125 dimensions,
    2**20 points) is used.
    """
    if path is None:
        text = (resources.files('mgmlqmc') / 'data' / DEFAULT_VECTOR).read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    values = [int(tok) for tok in text.split()]
    if len(values) < 3:
        raise ValueError('generating-vector file too short')
    m, dim, z = values[0], values[1], values[2:]
    if len(z) != dim:
        raise ValueError(f'file announces {dim} components but has {len(z)}')
    rule = LatticeRule(np.array(z, dtype=np.uint64), m)
    return rule if s is None else rule.truncate(s)


_DEFAULT = {}


def default_rule(s):
    """The embedded rule truncated to ``s`` dimensions (cached)."""
    if 'rule' not in _DEFAULT:
        _DEFAULT['rule'] = load_generating_vector()
    return _DEFAULT['rule'].truncate(s)


def _bit_reverse(n, m):
    n = np.asarray(n, dtype=np.uint64)
    out = np.zeros_like(n)
    for _ in range(m):
        out = (out << np.uint64(1)) | (n & np.uint64(1))
        n = n >> np.uint64(1)
    return out


def radical_inverse(n, m):
    """Base-2 radical inverse of ``n`` over ``m`` bits."""
    return _bit_reverse(n, m).astype(np.float64) / 2.0**m


def _check_index(rule, n):
    n = np.asarray(n, dtype=np.int64)
    if np.any(n < 0) or np.any(n >= rule.n_max):
        raise IndexError(f'lattice index out of range [0, 2**{rule.m})')
    return n.astype(np.uint64)


def lattice_points(rule, n):
    """Points ``{phi_2(n) z}`` for an array of indices; shape ``(len(n), s)``.

    Computed in exact integer arithmetic, so prefixes of length ``2**p`` are
    exactly the dyadic lattice ``{k z / 2**p}``.
    """
    n = _check_index(rule, np.atleast_1d(n))
    k = _bit_reverse(n, rule.m)
    mask = np.uint64(rule.n_max - 1)
    prod = (k[:, None] * rule.z[None, :]) & mask
    return prod.astype(np.float64) / float(rule.n_max)


def lattice_point(rule, n):
    """Single lattice-sequence point in ``[0, 1)^s``."""
    return lattice_points(rule, [n])[0]


def _wrap(x):
    return np.where(x >= 1.0, x - 1.0, x)


def shifted_points(rule, n, shift):
    """Lattice points shifted by ``shift`` modulo one."""
    shift = np.asarray(shift, dtype=np.float64)
    return _wrap(lattice_points(rule, n) + shift[None, :])


def shifted_point(rule, n, shift):
    return shifted_points(rule, [n], shift)[0]


def counter_rng(seed, *key):
    """Philox generator keyed by ``(seed, *key)``.

    Every key addresses an independent stream, so workers can regenerate any
    shift or sample without shared state.
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def uniform_shift(seed, s, level, r):
    """The shift for ``(level, r)``; prefixes agree across dimensions."""
    return counter_rng(seed, STREAM_SHIFT, level, r).random(s)


@dataclass(frozen=True)
class ShiftSet:
    """Uniform shifts ``shifts[level, r]`` in ``[0, 1)^s``."""
    shifts: np.ndarray
    seed: int

    @property
    def n_levels(self):
        return self.shifts.shape[0]

    @property
    def R(self):
        return self.shifts.shape[1]

    def __getitem__(self, idx):
        level, r = idx
        return self.shifts[level, r]


def draw_shifts(s, max_level, R, seed):
    """Independent uniform shifts for levels ``0..max_level`` and ``R`` shifts."""
    if R < 2:
        raise ValueError('at least two shifts are needed for a variance estimate')
    shifts = np.empty((max_level + 1, R, s))
    for level in range(max_level + 1):
        for r in range(R):
            shifts[level, r] = uniform_shift(seed, s, level, r)
    shifts.setflags(write=False)
    return ShiftSet(shifts, int(seed))


# INVERSE NORMAL CDF

_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425
U_MIN = 2.0**-64
U_MAX = 1.0 - 2.0**-53


def normal_cdf(x):
    return 0.5*erfc(-np.asarray(x, dtype=np.float64)/np.sqrt(2.0))


def _ppf_lower(p):
    """Inverse CDF for ``0 < p <= 1/2`` (rational start + one Halley step)."""
    x = np.empty_like(p)
    tail = p < _P_LOW
    q = np.sqrt(-2.0*np.log(p[tail]))
    x[tail] = ((((((_C[0]*q + _C[1])*q + _C[2])*q + _C[3])*q + _C[4])*q + _C[5])
               / ((((_D[0]*q + _D[1])*q + _D[2])*q + _D[3])*q + 1.0))
    q = p[~tail] - 0.5
    r = q*q
    x[~tail] = ((((((_A[0]*r + _A[1])*r + _A[2])*r + _A[3])*r + _A[4])*r + _A[5])*q
                / (((((_B[0]*r + _B[1])*r + _B[2])*r + _B[3])*r + _B[4])*r + 1.0))
    e = 0.5*erfc(-x/np.sqrt(2.0)) - p
    u = e*np.sqrt(2.0*np.pi)*np.exp(0.5*x*x)
    return x - u/(1.0 + 0.5*x*u)


def map_to_normal(u):
    """Componentwise inverse standard-normal CDF.

    Inputs at or beyond the ends of the unit interval are moved inward to
    ``2**-64`` and ``1 - 2**-53``; the upper half is mapped through ``1 - u``
    (exact in floating point) so that the map is odd about one half.
    """
    u = np.asarray(u, dtype=np.float64)
    u = np.where(u <= 0.0, U_MIN, np.where(u >= 1.0, U_MAX, u))
    upper = u > 0.5
    p = np.where(upper, 1.0 - u, u)
    x = _ppf_lower(np.atleast_1d(p)).reshape(p.shape)
    return np.where(upper, -x, x)
