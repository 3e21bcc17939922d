"""Samplers: map parameter vectors to per-level quantities of interest.

A sampler exposes ``s`` (parameter dimension) and
``solve(level, Y) -> (F, work)`` where ``F[n, k]`` is the level-``k`` value
for the ``n``-th row of ``Y`` (``k = 0..level``) and ``work[n]`` the cost of
producing that row. The estimators only ever talk to this interface.
"""
import numpy as np

from mgmlqmc.multigrid import CoefficientSample, GridHierarchy, fmg_solve
from mgmlqmc.random_field import field_basis

__all__ = ['PDESampler', 'ConstantCoefficientSampler']


class PDESampler:
    """Lognormal-diffusion model problem solved with FMG.

    Parameters
    ----------
    kl : KLExpansion
    max_level : int
        Finest level that may be requested.
    mu0, mu1, mu2 : int
        V-cycles per FMG level, pre- and post-smoothing sweeps.
    basis_memory : float
        Bytes allowed for cached field bases; larger levels are evaluated in
        chunks on every call instead.
    """

    def __init__(self, kl, max_level=8, mu0=1, mu1=2, mu2=1,
                 basis_memory=2.0e9, f=1.0):
        self.kl = kl
        self.hierarchy = GridHierarchy(max_level + 1)
        self.max_level = max_level
        self.mu0, self.mu1, self.mu2 = mu0, mu1, mu2
        self.basis_memory = basis_memory
        self.f = f
        self._basis = {}

    @property
    def s(self):
        return self.kl.s

    def prepare(self, level):
        """Build (and cache) field bases for levels ``0..level``."""
        for k in range(level + 1):
            if k in self._basis:
                continue
            pts = self.hierarchy.edge_midpoints(k)
            used = sum(b.nbytes for b in self._basis.values())
            if used + pts.shape[0]*self.s*8 > self.basis_memory:
                break
            self._basis[k] = field_basis(self.kl, pts)

    def log_coefficients(self, level, Y):
        """Gaussian field at the edge midpoints of ``level`` for each row of Y."""
        if level in self._basis:
            return Y @ self._basis[level].T
        return (field_basis(self.kl, self.hierarchy.edge_midpoints(level)) @ Y.T).T

    def solve(self, level, Y):
        if level > self.max_level:
            raise ValueError(f'level {level} beyond max_level={self.max_level}')
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        self.prepare(level)
        coeffs = [np.exp(self.log_coefficients(k, Y)) for k in range(level + 1)]
        F = np.empty((Y.shape[0], level + 1))
        work = np.empty(Y.shape[0])
        for n in range(Y.shape[0]):
            edges = [self.hierarchy.split_edges(k, coeffs[k][n])
                     for k in range(level + 1)]
            sample = CoefficientSample(self.hierarchy, edges)
            res = fmg_solve(sample, level, self.mu0, self.mu1, self.mu2, self.f)
            F[n] = res.qois
            work[n] = res.work
        return F, work


class ConstantCoefficientSampler:
    """``a = 1`` regardless of the parameters (deterministic reference)."""

    def __init__(self, s=1, max_level=8, mu0=1, f=1.0):
        self.s = s
        self.max_level = max_level
        self.hierarchy = GridHierarchy(max_level + 1)
        self.mu0 = mu0
        self.f = f
        self._cache = {}

    def solve(self, level, Y):
        Y = np.atleast_2d(Y)
        if level not in self._cache:
            sample = CoefficientSample.constant(self.hierarchy, level)
            self._cache[level] = fmg_solve(sample, level, self.mu0, f=self.f)
        res = self._cache[level]
        n = Y.shape[0]
        return np.tile(res.qois, (n, 1)), np.full(n, float(res.work))
