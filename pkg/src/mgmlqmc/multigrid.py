"""Finite differences and Full Multigrid for -div(a grad u) = f on the unit square.

Homogeneous Dirichlet conditions; uniform nested grids with ``h_0 = 1/4`` and
refinement factor two. Each level is its own discretization (the coefficient
is sampled at that level's edge midpoints), so the nested-iteration iterates
of one FMG solve provide the quantity of interest on every level at once.
"""
from dataclasses import dataclass

import numpy as np

from mgmlqmc import core

__all__ = ['GridHierarchy', 'CoefficientSample', 'Operator', 'FMGResult',
           'CoarseSolveError', 'discretize', 'sgs_sweep', 'residual',
           'restrict', 'prolongate', 'coarse_solve', 'v_cycle', 'fmg_solve',
           'qoi', 'dump_grid_csv']


class CoarseSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridHierarchy:
    """Nested grids ``h_l = h0 * factor**-l``."""
    n_levels: int
    m0: int = 4
    factor: int = 2

    def m(self, level):
        return self.m0*self.factor**level

    def h(self, level):
        return 1.0/self.m(level)

    def nodes(self, level):
        return np.arange(self.m(level) + 1)/self.m(level)

    def edge_midpoints(self, level):
        """Points for ``ax`` (shape ``(m, m+1)``) and ``ay`` (``(m+1, m)``).

        Returned stacked as one ``(P, 2)`` array, ``ax`` points first.
        """
        m = self.m(level)
        h = 1.0/m
        xi = (np.arange(m) + 0.5)*h
        xn = np.arange(m + 1)*h
        X, Y = np.meshgrid(xi, xn, indexing='ij')
        px = np.column_stack([X.ravel(), Y.ravel()])
        X, Y = np.meshgrid(xn, xi, indexing='ij')
        py = np.column_stack([X.ravel(), Y.ravel()])
        return np.vstack([px, py])

    def split_edges(self, level, values):
        """Inverse of :meth:`edge_midpoints` for an array of values."""
        m = self.m(level)
        n = m*(m + 1)
        return values[:n].reshape(m, m + 1), values[n:].reshape(m + 1, m)


@dataclass
class CoefficientSample:
    """Edge-midpoint coefficients ``(ax, ay)`` for levels ``0..L``."""
    hierarchy: GridHierarchy
    edges: list

    def __post_init__(self):
        for ax, ay in self.edges:
            if np.any(ax <= 0) or np.any(ay <= 0):
                raise ValueError('diffusion coefficient must be positive')

    @property
    def max_level(self):
        return len(self.edges) - 1

    @classmethod
    def from_function(cls, hierarchy, max_level, func):
        """Evaluate ``func(points) -> values`` at each level's edge midpoints."""
        edges = []
        for level in range(max_level + 1):
            vals = np.asarray(func(hierarchy.edge_midpoints(level)), dtype=float)
            edges.append(hierarchy.split_edges(level, vals))
        return cls(hierarchy, edges)

    @classmethod
    def constant(cls, hierarchy, max_level, value=1.0):
        return cls.from_function(hierarchy, max_level,
                                 lambda p: np.full(p.shape[0], float(value)))


class Operator:
    """Matrix-free variable-coefficient 5-point operator on one level."""

    def __init__(self, ax, ay, h):
        self.ax = np.ascontiguousarray(ax, dtype=np.float64)
        self.ay = np.ascontiguousarray(ay, dtype=np.float64)
        self.h = h
        self.h2 = h*h
        self.m = self.ax.shape[0]
        self.n_interior = (self.m - 1)**2

    def zeros(self):
        return np.zeros((self.m + 1, self.m + 1))

    def apply(self, u):
        out = self.zeros()
        core.residual(u, self.zeros(), self.ax, self.ay, self.h2, out)
        return -out


@dataclass
class FMGResult:
    """Per-level FMG iterates, their quantities of interest and the work spent."""
    solutions: list
    qois: np.ndarray
    work: int
    wall_time: float = 0.0


def _rhs(hierarchy, level, f):
    m = hierarchy.m(level)
    b = np.zeros((m + 1, m + 1))
    if callable(f):
        x = hierarchy.nodes(level)
        X, Y = np.meshgrid(x[1:-1], x[1:-1], indexing='ij')
        b[1:-1, 1:-1] = f(X, Y)
    else:
        b[1:-1, 1:-1] = f
    return b


def discretize(sample, level, f=1.0):
    """Operator and right-hand side for ``level`` of a coefficient sample."""
    ax, ay = sample.edges[level]
    op = Operator(ax, ay, sample.hierarchy.h(level))
    return op, _rhs(sample.hierarchy, level, f)


def sgs_sweep(op, u, b, work=None):
    """One symmetric Gauss-Seidel sweep, in place; returns ``u``."""
    core.sgs_sweep(u, b, op.ax, op.ay, op.h2)
    if work is not None:
        work[0] += 2*op.n_interior
    return u


def residual(op, u, b, work=None):
    r = op.zeros()
    core.residual(u, b, op.ax, op.ay, op.h2, r)
    if work is not None:
        work[0] += op.n_interior
    return r


def restrict(r):
    """Full weighting to the next coarser grid."""
    mc = (r.shape[0] - 1)//2
    rc = np.zeros((mc + 1, mc + 1))
    core.restrict_fw(r, rc)
    return rc


def prolongate(e):
    """Bilinear interpolation to the next finer grid."""
    mf = 2*(e.shape[0] - 1)
    ef = np.empty((mf + 1, mf + 1))
    core.prolongate_bilinear(e, ef)
    return ef


def coarse_solve(op, b, u=None, rtol=1e-13, maxiter=2000, work=None):
    """SGS iteration until ``||b - A u|| <= rtol ||b||``."""
    u = op.zeros() if u is None else u
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0 and not np.any(u):
        return u
    target = rtol*bnorm
    for _ in range(maxiter):
        if np.linalg.norm(residual(op, u, b, work)) <= target:
            return u
        sgs_sweep(op, u, b, work)
    raise CoarseSolveError(f'coarse solve did not reach rtol={rtol:g} '
                           f'in {maxiter} sweeps')


def v_cycle(ops, level, u, b, mu1=2, mu2=1, work=None):
    """One V(mu1, mu2) correction cycle on ``ops[level]``; returns ``u``."""
    op = ops[level]
    if level == 0:
        return coarse_solve(op, b, u, work=work)
    for _ in range(mu1):
        sgs_sweep(op, u, b, work)
    rc = restrict(residual(op, u, b, work))
    ec = v_cycle(ops, level - 1, ops[level - 1].zeros(), rc, mu1, mu2, work)
    u += prolongate(ec)
    for _ in range(mu2):
        sgs_sweep(op, u, b, work)
    return u


def qoi(u):
    """Nodal value at the domain centre."""
    c = (u.shape[0] - 1)//2
    return float(u[c, c])


def fmg_solve(sample, level, mu0=1, mu1=2, mu2=1, f=1.0):
    """Full Multigrid up to ``level``.

    Level 0 is solved to round-off; each finer level starts from the
    prolongated coarser iterate and receives ``mu0`` V-cycles. The iterate
    reached on every level is kept, together with its quantity of interest.
    """
    if level > sample.max_level:
        raise ValueError(f'sample covers levels 0..{sample.max_level}, '
                         f'level {level} requested')
    work = [0]
    ops, rhs = [], []
    for k in range(level + 1):
        op, b = discretize(sample, k, f)
        ops.append(op)
        rhs.append(b)
    u = coarse_solve(ops[0], rhs[0], work=work)
    solutions = [u.copy()]
    for k in range(1, level + 1):
        u = prolongate(u)
        for _ in range(mu0):
            v_cycle(ops, k, u, rhs[k], mu1, mu2, work)
        solutions.append(u.copy())
    return FMGResult(solutions, np.array([qoi(s) for s in solutions]), work[0])


def dump_grid_csv(u, path):
    """Write a nodal grid as ``x,y,u`` rows (debug output)."""
    m = u.shape[0] - 1
    x = np.arange(m + 1)/m
    X, Y = np.meshgrid(x, x, indexing='ij')
    np.savetxt(path, np.column_stack([X.ravel(), Y.ravel(), u.ravel()]),
               delimiter=',', header='x,y,u', comments='', fmt='%.17g')
