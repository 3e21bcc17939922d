"""Multilevel (quasi-)Monte Carlo estimators with optional sample recycling.

``R`` independent estimators are run side by side (randomly shifted lattice
sequences in QMC mode, independent random streams in MC mode); their spread
gives the variance estimate, which stays valid when coarse FMG iterates are
recycled and the level corrections become correlated.
"""
import logging
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from mgmlqmc.lattice import (STREAM_MC, counter_rng, default_rule,
                             map_to_normal, shifted_points, uniform_shift)

__all__ = ['EstimatorConfig', 'DifferenceAccumulator', 'RunResult',
           'NonConvergenceError', 'sample_parameters', 'sample_block',
           'run_sample', 'run_fixed', 'differences', 'estimator_value',
           'variance_over_shifts', 'level_variance', 'bias_estimate',
           'mlmc_optimal_nsamples', 'adaptive_run', 'METHODS']

log = logging.getLogger(__name__)

# method name -> (mode, recycle)
METHODS = {
    'MLMC': ('MC', False),
    'MG-MLMC': ('MC', True),
    'MLQMC': ('QMC', False),
    'MG-MLQMC': ('QMC', True),
}


class NonConvergenceError(RuntimeError):
    """Budget or level cap hit; ``result`` holds the partial run."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass
class EstimatorConfig:
    """Settings of one adaptive run.

    ``chunk`` splits each shift's new samples into tasks of that many points
    (0 means one task per shift). The task layout depends only on the
    configuration, never on ``workers``, so results do not either.
    """
    mode: str = 'QMC'
    recycle: bool = False
    R: int = 20
    factor: float = 2.0
    tol: float = 1e-3
    seed: int = 0
    cost: str = 'work'
    max_level: int = 8
    max_cost: float = 1e10
    workers: int = 1
    chunk: int = 0
    rule: object = field(default=None, repr=False)

    def __post_init__(self):
        self.mode = self.mode.upper()
        if self.mode not in ('MC', 'QMC'):
            raise ValueError(f'unknown mode {self.mode!r}')
        if self.R < 2:
            raise ValueError('need at least two shifts / replicas')
        if self.cost not in ('work', 'time'):
            raise ValueError("cost must be 'work' or 'time'")
        if not self.tol > 0:
            raise ValueError('tolerance must be positive')

    @classmethod
    def from_method(cls, method, **kwargs):
        mode, recycle = METHODS[method]
        return cls(mode=mode, recycle=recycle, **kwargs)

    @property
    def method(self):
        return {v: k for k, v in METHODS.items()}[(self.mode, self.recycle)]

    def echo(self):
        d = asdict(self)
        d.pop('rule')
        d['method'] = self.method
        return d


# PARAMETERS

def sample_block(config, s, level, r, n0, n1):
    """Parameter vectors for indices ``n0..n1-1`` of ``(level, r)``; ``(n, s)``."""
    if config.mode == 'QMC':
        rule = config.rule.truncate(s) if config.rule is not None else default_rule(s)
        shift = uniform_shift(config.seed, s, level, r)
        return map_to_normal(shifted_points(rule, np.arange(n0, n1), shift))
    out = np.empty((n1 - n0, s))
    for i, n in enumerate(range(n0, n1)):
        out[i] = counter_rng(config.seed, STREAM_MC, level, r, n).standard_normal(s)
    return out


def sample_parameters(config, s, level, r, n):
    return sample_block(config, s, level, r, n, n + 1)[0]


# ACCUMULATION

def differences(F):
    """``F_k - F_{k-1}`` per row, with ``F_{-1} = 0``."""
    d = F.copy()
    d[:, 1:] -= F[:, :-1]
    return d


class DifferenceAccumulator:
    """Running sums ``S[tau, k, r]`` of ``F_tau - F_{tau-1}`` at level-``k`` points.

    Level ``k`` has ``N[k]`` points per shift. Without recycling only the
    diagonal ``tau == k`` is filled.
    """

    def __init__(self, R, max_level, recycle):
        self.R = R
        self.recycle = recycle
        self.sums = np.zeros((max_level + 1, max_level + 1, R))
        self.N = np.zeros(max_level + 1, dtype=np.int64)
        self.L = -1

    @property
    def max_level(self):
        return self.N.size - 1

    def add(self, k, r, diffs):
        """Add per-sample differences (shape ``(n, k+1)``) for shift ``r``."""
        total = np.sum(diffs, axis=0)
        if self.recycle:
            self.sums[:k + 1, k, r] += total
        else:
            self.sums[k, k, r] += total[k]
        self.L = max(self.L, k)

    def effective(self, tau, recycle=None):
        recycle = self.recycle if recycle is None else recycle
        if recycle:
            return int(self.N[tau:self.L + 1].sum())
        return int(self.N[tau])

    def upsilon(self, tau, recycle=None):
        """Per-shift level estimates, shape ``(R,)``; NaN without samples."""
        recycle = self._check(recycle)
        n = self.effective(tau, recycle)
        if n == 0:
            return np.full(self.R, np.nan)
        if recycle:
            return self.sums[tau, tau:self.L + 1, :].sum(axis=0)/n
        return self.sums[tau, tau, :]/n

    def shift_estimates(self, recycle=None):
        """``Q_r = sum_l Upsilon_{l,r}`` for every shift."""
        if self.L < 0:
            raise ValueError('accumulator is empty')
        return np.sum([self.upsilon(t, recycle) for t in range(self.L + 1)], axis=0)

    def _check(self, recycle):
        if recycle is None:
            return self.recycle
        if recycle and not self.recycle:
            raise ValueError('recycled estimate needs a recycling accumulator')
        return recycle


def estimator_value(acc, recycle=None):
    """Average of the per-shift multilevel estimates."""
    q = acc.shift_estimates(recycle)
    if np.any(np.isnan(q)):
        raise ValueError('some level has no samples')
    return float(np.mean(q))


def _shift_variance(values):
    values = np.asarray(values, dtype=np.float64)
    R = values.size
    if R < 2:
        raise ValueError('variance over shifts needs R >= 2')
    if np.any(np.isnan(values)):
        return math.inf
    return float(np.sum((values - values.mean())**2)/(R*(R - 1)))


def variance_over_shifts(acc, recycle=None):
    """Sample variance of the per-shift estimates divided by ``R``."""
    if acc.R < 2:
        raise ValueError('variance over shifts needs R >= 2')
    if acc.L < 0:
        return math.inf
    return _shift_variance(acc.shift_estimates(recycle))


def level_variance(acc, level, recycle=None):
    """Contribution of one level: shift variance of its ``Upsilon`` terms."""
    return _shift_variance(acc.upsilon(level, recycle))


def run_sample(acc, sampler, config, level, r, n):
    """Solve one sample ``(level, r, n)`` and add it to ``acc``; returns the work."""
    y = sample_block(config, sampler.s, level, r, n, n + 1)
    F, work = sampler.solve(level, y)
    acc.add(level, r, differences(F))
    return float(np.sum(work))


def run_fixed(config, sampler, N):
    """Accumulator for prescribed per-level point-set sizes ``N`` (no adaptivity)."""
    N = [int(n) for n in N]
    acc = DifferenceAccumulator(config.R, len(N) - 1, config.recycle)
    for level, n in enumerate(N):
        if n == 0:
            continue
        for r in range(config.R):
            F, _ = sampler.solve(level, sample_block(config, sampler.s, level, r, 0, n))
            acc.add(level, r, differences(F))
        acc.N[level] = n
    acc.L = len(N) - 1
    return acc


# BIAS AND ALLOCATION

def bias_estimate(upsilon_bar, factor=2.0, min_alpha=0.5):
    """Bias ``|Ybar_L| / (factor**alpha + 1)`` with alpha from a log-linear fit.

    The fit uses levels ``l >= 1`` with nonzero means. Degenerate fits
    (fewer than two usable points or a non-decaying slope) fall back to
    ``min_alpha``. Returns ``(bias, alpha)``.
    """
    ub = np.abs(np.asarray(upsilon_bar, dtype=np.float64))
    if ub.size < 3:
        raise ValueError('bias estimate needs at least three levels')
    L = ub.size - 1
    if ub[L] == 0.0:
        return 0.0, math.nan
    lv = np.arange(1, L + 1)
    mask = ub[1:] > 0
    alpha = min_alpha
    if mask.sum() >= 2:
        x = lv[mask]*math.log(factor)
        slope = np.polyfit(x, np.log(ub[1:][mask]), 1)[0]
        if -slope > 0:
            alpha = -slope
    return float(ub[L]/(factor**alpha + 1.0)), float(alpha)


def mlmc_optimal_nsamples(V, C, eps):
    """Classic MLMC allocation ``ceil(2/eps^2 sqrt(V/C) sum sqrt(V C))``."""
    V = np.asarray(V, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if np.any(V <= 0) or np.any(C <= 0) or not eps > 0:
        raise ValueError('V, C and eps must be positive')
    total = np.sum(np.sqrt(V*C))
    return np.ceil(2.0/eps**2*np.sqrt(V/C)*total).astype(np.int64)


# RESULTS

@dataclass
class RunResult:
    estimate: float
    variance: float
    bias: float
    alpha: float
    L: int
    N: list
    fresh_solves: list
    effective_samples: list
    recycled_percent: list
    level_variances: list
    costs: list
    upsilon_bar: list
    total_cost: float
    seed: int
    config: dict
    converged: bool = True
    message: str = ''
    history: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self):
        return asdict(self)


# PARALLEL EXECUTION

_SAMPLER = None


def _execute(task):
    config, level, r, n0, n1 = task
    Y = sample_block(config, _SAMPLER.s, level, r, n0, n1)
    t0 = time.perf_counter()
    F, work = _SAMPLER.solve(level, Y)
    return F, float(np.sum(work)), time.perf_counter() - t0


class _TaskRunner:
    """Executes sample tasks inline or on a forked process pool.

    Results come back in task order, so all reductions happen in the same
    order whatever the number of workers.
    """

    def __init__(self, sampler, workers):
        self.sampler = sampler
        self.workers = workers
        self.pool = None
        self.prepared = -1

    def run(self, tasks, level):
        global _SAMPLER
        prepare = getattr(self.sampler, 'prepare', None)
        if self.workers <= 1:
            _SAMPLER = self.sampler
            return [_execute(t) for t in tasks]
        if level > self.prepared or self.pool is None:
            # Build shared state in the parent, then fork so workers inherit it.
            if prepare is not None:
                prepare(level)
            self.close()
            _SAMPLER = self.sampler
            ctx = multiprocessing.get_context('fork')
            self.pool = ProcessPoolExecutor(self.workers, mp_context=ctx)
            self.prepared = level
        return list(self.pool.map(_execute, tasks))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()
            self.pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _tasks(config, level, n0, n1):
    step = config.chunk if config.chunk > 0 else max(n1 - n0, 1)
    return [(config, level, r, a, min(a + step, n1))
            for r in range(config.R) for a in range(n0, n1, step)]


# ADAPTIVE DRIVER

def adaptive_run(config, sampler):
    """Adaptive doubling algorithm for MLMC / MLQMC with optional recycling.

    Levels are added until at least three exist and the bias estimate is
    below ``tol/sqrt(2)``; on each level set the sample count is doubled on
    the level with the largest variance-to-cost ratio until the shift
    variance is below ``tol**2/2``.

    Raises
    ------
    NonConvergenceError
        When the level cap or the cost budget is reached first.
    """
    t_start = time.perf_counter()
    R, Lmax, tol = config.R, config.max_level, config.tol
    acc = DifferenceAccumulator(R, Lmax, config.recycle)
    N = np.zeros(Lmax + 1, dtype=np.int64)
    N_old = np.zeros(Lmax + 1, dtype=np.int64)
    V = np.full(Lmax + 1, math.inf)
    spent = np.zeros(Lmax + 1)
    solves = np.zeros(Lmax + 1, dtype=np.int64)
    history = []
    state = {'bias': math.inf, 'alpha': math.nan, 'L': -1}
    if config.mode == 'QMC':
        n_points = (config.rule or default_rule(1)).n_max
    else:
        n_points = 2**62

    def costs():
        with np.errstate(invalid='ignore', divide='ignore'):
            return np.where(solves > 0, spent/np.maximum(solves, 1), 0.0)

    def snapshot(converged, message):
        L = state['L']
        C = costs()
        eff = [acc.effective(t) for t in range(L + 1)]
        rec = [100.0*(e - int(N[t]))/e if e > 0 else 0.0
               for t, e in enumerate(eff)]
        ub = [float(np.mean(acc.upsilon(t))) for t in range(L + 1)]
        var = variance_over_shifts(acc) if L >= 0 else math.inf
        try:
            est = estimator_value(acc) if L >= 0 else math.nan
        except ValueError:
            est = math.nan
        return RunResult(
            estimate=est, variance=var, bias=state['bias'], alpha=state['alpha'],
            L=L, N=[int(n) for n in N[:L + 1]],
            fresh_solves=[int(n) for n in N[:L + 1]],
            effective_samples=eff, recycled_percent=rec,
            level_variances=[float(v) for v in V[:L + 1]],
            costs=[float(c) for c in C[:L + 1]], upsilon_bar=ub,
            total_cost=float(spent.sum()), seed=config.seed,
            config=config.echo(), converged=converged, message=message,
            history=history, wall_time=time.perf_counter() - t_start)

    def sample_and_solve(level, runner):
        tasks = _tasks(config, level, int(N_old[level]), int(N[level]))
        for (_, lvl, r, n0, n1), (F, work, dt) in zip(tasks, runner.run(tasks, level)):
            acc.add(level, r, differences(F))
            spent[level] += work if config.cost == 'work' else dt
        solves[level] += (N[level] - N_old[level])*R
        acc.N[level] = N[level]
        N_old[level] = N[level]
        for t in range(state['L'] + 1):
            V[t] = level_variance(acc, t)
        history.append({'level': int(level),
                        'N': [int(n) for n in N[:state['L'] + 1]],
                        'effective': [acc.effective(t) for t in range(state['L'] + 1)],
                        'V': [float(v) for v in V[:state['L'] + 1]]})

    with _TaskRunner(sampler, config.workers) as runner:
        while state['L'] < 2 or state['bias'] > tol/math.sqrt(2.0):
            if state['L'] + 1 > Lmax:
                raise NonConvergenceError(
                    f'bias above tolerance at the finest allowed level {Lmax}',
                    snapshot(False, 'max_level'))
            state['L'] += 1
            acc.L = state['L']
            L = state['L']
            while variance_over_shifts(acc) > tol**2/2.0:
                C = costs()
                with np.errstate(divide='ignore', invalid='ignore'):
                    ratio = np.where(C[:L + 1] > 0, V[:L + 1]/C[:L + 1], math.inf)
                level = int(np.argmax(ratio))
                new = max(1, 2*int(N[level]))
                if new > n_points:
                    raise NonConvergenceError(
                        f'point set on level {level} would exceed {n_points} points',
                        snapshot(False, 'max_points'))
                projected = (new - N[level])*R*C[level]
                if spent.sum() + projected > config.max_cost:
                    raise NonConvergenceError(
                        f'cost budget {config.max_cost:g} exhausted',
                        snapshot(False, 'max_cost'))
                N[level] = new
                sample_and_solve(level, runner)
            if not np.all(np.diff(N[:L + 1]) <= 0):
                log.info('non-monotone sample counts %s', N[:L + 1].tolist())
            if L >= 2:
                ub = [np.mean(acc.upsilon(t)) for t in range(L + 1)]
                state['bias'], state['alpha'] = bias_estimate(ub, config.factor)
    return snapshot(True, '')
