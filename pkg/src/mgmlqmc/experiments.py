"""Experiment orchestration behind the ``uq`` command."""
import csv
import glob
import io
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from mgmlqmc.estimators import (METHODS, EstimatorConfig, NonConvergenceError,
                                adaptive_run, differences, sample_block)
from mgmlqmc.problem import PDESampler
from mgmlqmc.random_field import MaternParams, build_kl_cached
from mgmlqmc.rates import RATES_HEADER, estimate_rates, rates_row, speedups

log = logging.getLogger(__name__)

CASES = [(lc, nu) for lc in (0.1, 0.3, 0.5) for nu in (0.5, 1.0, 2.0)]
DEFAULT_TOLERANCES = [1e-3, 5e-4, 2.5e-4, 1.25e-4]
SCHEMA_VERSION = 1

LEVELS_HEADER = ['level', 'N', 'fresh_solves', 'effective_samples',
                 'recycled_percent', 'V', 'C', 'upsilon_bar']
SUMMARY_HEADER = ['method', 'lc', 'nu', 'eps', 'seed', 'converged', 'estimate',
                  'variance', 'bias', 'alpha', 'L', 'total_cost']
RATE_LEVELS_HEADER = ['level', 'h', 'mean_F', 'var_F', 'mean_dF', 'var_dF', 'cost']
CURVE_HEADER = ['level', 'N', 'variance']
COST_HEADER = ['method', 'lc', 'nu', 'eps', 'seed', 'status', 'total_cost']
SPEEDUP_HEADER = ['lc', 'nu', 'S1', 'S2', 'S3', 'n_tolerances']
REPORT_HEADER = ['manifest'] + SUMMARY_HEADER


@dataclass
class ExperimentConfig:
    cases: list = field(default_factory=lambda: list(CASES))
    tolerances: list = field(default_factory=lambda: list(DEFAULT_TOLERANCES))
    modes: list = field(default_factory=lambda: ['MLMC', 'MLQMC', 'MG-MLQMC'])
    R: int = 20
    seeds: list = field(default_factory=lambda: [0])
    n_q: int = 24
    fraction: float = 0.998
    max_level: int = 8
    max_cost: float = 1e10
    cost: str = 'work'
    workers: int = 1
    chunk: int = 0
    pilot: int = 16
    rate_levels: int = 5
    outdir: str = 'results'
    cache_dir: str = None

    def __post_init__(self):
        self.cases = [(float(lc), float(nu)) for lc, nu in self.cases]
        self.tolerances = [float(t) for t in self.tolerances]
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    def validate(self):
        if any(t <= 0 for t in self.tolerances):
            raise ValueError('tolerances must be positive')
        if any(b >= a for a, b in zip(self.tolerances, self.tolerances[1:])):
            raise ValueError('tolerances must be decreasing')
        bad = set(self.modes) - set(METHODS)
        if bad:
            raise ValueError(f'unknown modes {sorted(bad)}')
        for lc, nu in self.cases:
            MaternParams(lc, nu)
        if self.R < 2:
            raise ValueError('R must be at least 2')

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f'unknown config keys {sorted(unknown)}')
        return cls(**data)

    def replace(self, **changes):
        d = asdict(self)
        d.update({k: v for k, v in changes.items() if v is not None})
        return ExperimentConfig(**d)

    def estimator(self, method, eps, seed):
        return EstimatorConfig.from_method(
            method, R=self.R, tol=eps, seed=seed, cost=self.cost,
            max_level=self.max_level, max_cost=self.max_cost,
            workers=self.workers, chunk=self.chunk)


# FILES

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _atomic_write(path, text):
    tmp = f'{path}.tmp{os.getpid()}'
    with open(tmp, 'w', newline='') as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path, schema, header, rows):
    """CSV with a ``# mgmlqmc-<schema> v1`` first line, written atomically."""
    buf = io.StringIO()
    buf.write(f'# mgmlqmc-{schema} v{SCHEMA_VERSION}\n')
    w = csv.writer(buf, lineterminator='\n')
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    _atomic_write(path, buf.getvalue())


def read_csv(path):
    """Rows of a versioned CSV as dicts; returns ``(schema_line, rows)``."""
    with open(path, newline='') as fh:
        first = fh.readline().strip()
        return first, list(csv.DictReader(fh))


def write_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=1, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f'cannot serialize {type(o).__name__}')


def case_tag(lc, nu):
    return f'lc{lc:g}_nu{nu:g}'


def run_tag(method, lc, nu, eps, seed):
    return f'run_{method}_{case_tag(lc, nu)}_eps{eps:g}_seed{seed}'


# SAMPLERS

def make_sampler(config, lc, nu, max_level=None):
    cache = config.cache_dir or os.path.join(config.outdir, 'kl_cache')
    kl = build_kl_cached(MaternParams(lc, nu), config.n_q, config.fraction, cache)
    return PDESampler(kl, config.max_level if max_level is None else max_level)


# RUN

def cmd_run(config, method, lc, nu, eps, seed=None, sampler=None):
    """One adaptive run; writes manifest and level table. Returns ``(result, paths)``."""
    seed = config.seeds[0] if seed is None else seed
    os.makedirs(config.outdir, exist_ok=True)
    sampler = sampler or make_sampler(config, lc, nu)
    est = config.estimator(method, eps, seed)
    t0 = time.time()
    try:
        result = adaptive_run(est, sampler)
    except NonConvergenceError as exc:
        result = exc.result
        log.warning('%s %s eps=%g: %s', method, case_tag(lc, nu), eps, exc)
    tag = run_tag(method, lc, nu, eps, seed)
    paths = {'manifest': os.path.join(config.outdir, tag + '.json'),
             'levels': os.path.join(config.outdir, tag + '_levels.csv'),
             'summary': os.path.join(config.outdir, tag + '_summary.csv')}
    rows = zip(range(result.L + 1), result.N, result.fresh_solves,
               result.effective_samples, result.recycled_percent,
               result.level_variances, result.costs, result.upsilon_bar)
    write_csv(paths['levels'], 'levels', LEVELS_HEADER, rows)
    write_csv(paths['summary'], 'summary', SUMMARY_HEADER, [summary_row(method, lc, nu, eps, seed, result)])
    write_json(paths['manifest'], {
        'schema': f'mgmlqmc-run v{SCHEMA_VERSION}',
        'method': method, 'lc': lc, 'nu': nu, 'eps': eps, 'seed': seed,
        'status': 'converged' if result.converged else 'nonconverged',
        'timestamp': time.strftime('%Y-%m-%dT%H:%M:%S', time.localtime(t0)),
        's': sampler.s,
        'tables': {k: os.path.basename(v) for k, v in paths.items() if k != 'manifest'},
        'result': result.to_dict(),
    })
    return result, paths


def summary_row(method, lc, nu, eps, seed, r):
    return [method, lc, nu, eps, seed, r.converged, r.estimate, r.variance,
            r.bias, r.alpha, r.L, r.total_cost]


# RATES

def pilot_samples(sampler, level, n, R, seed=0, mode='QMC'):
    """QoI values ``F[r, i, k]`` for ``n`` points per shift and the total work."""
    cfg = EstimatorConfig(mode=mode, R=R, seed=seed)
    F = np.empty((R, n, level + 1))
    work = 0.0
    for r in range(R):
        Y = sample_block(cfg, sampler.s, level, r, 0, n)
        F[r], w = sampler.solve(level, Y)
        work += float(np.sum(w))
    return F, work


def variance_curve(values):
    """Shift variance of the running mean over ``N = 1, 2, 4, ...`` points.

    ``values`` has shape ``(R, n)``. Returns a list of ``(N, variance)``.
    """
    R, n = values.shape
    out = []
    N = 1
    while N <= n:
        q = values[:, :N].mean(axis=1)
        out.append((N, float(np.sum((q - q.mean())**2)/(R*(R - 1)))))
        N *= 2
    return out


def level_statistics(sampler, levels, n, R, seed=0, mode='QMC'):
    """Per-level moments, variance curves and costs from pilot samples."""
    hist = {'h': [], 'mean_F': [], 'var_F': [], 'mean': [], 'var': [],
            'cost': [], 'curves': []}
    for level in range(levels + 1):
        F, work = pilot_samples(sampler, level, n, R, seed, mode)
        d = differences(F.reshape(-1, level + 1)).reshape(F.shape)[:, :, level]
        fl = F[:, :, level]
        hist['h'].append(sampler.hierarchy.h(level))
        hist['mean_F'].append(float(fl.mean()))
        hist['var_F'].append(float(fl.var(ddof=1)))
        hist['mean'].append(float(d.mean()))
        hist['var'].append(float(d.var(ddof=1)))
        hist['cost'].append(work/(R*n))
        hist['curves'].append(variance_curve(d))
    return hist


def cmd_rates(config):
    """Pilot statistics and fitted rates for every case."""
    os.makedirs(config.outdir, exist_ok=True)
    rows = []
    for lc, nu in config.cases:
        tag = case_tag(lc, nu)
        try:
            sampler = make_sampler(config, lc, nu, max_level=config.rate_levels)
            hist = level_statistics(sampler, config.rate_levels, config.pilot,
                                    config.R, config.seeds[0])
        except Exception as exc:
            raise RuntimeError(f'case {tag} failed: {exc}') from exc
        write_csv(os.path.join(config.outdir, f'rates_{tag}_levels.csv'), 'rate-levels',
                  RATE_LEVELS_HEADER,
                  [[k, hist['h'][k], hist['mean_F'][k], hist['var_F'][k],
                    hist['mean'][k], hist['var'][k], hist['cost'][k]]
                   for k in range(len(hist['h']))])
        write_csv(os.path.join(config.outdir, f'rates_{tag}_curves.csv'), 'rate-curves',
                  CURVE_HEADER,
                  [[k, N, v] for k, c in enumerate(hist['curves']) for N, v in c])
        est = estimate_rates(hist)
        for flag in est.flags:
            log.info('%s: %s', tag, flag)
        rows.append(rates_row(lc, nu, est))
    write_csv(os.path.join(config.outdir, 'rates.csv'), 'rates', RATES_HEADER, rows)
    return rows


# SWEEP

def _load_manifest(path):
    with open(path) as fh:
        m = json.load(fh)
    if not str(m.get('schema', '')).startswith('mgmlqmc-run'):
        raise ValueError('not a run manifest')
    return m


def cmd_sweep(config, resume=True):
    """All (mode, case, tolerance, seed) runs, cost series and speedup table."""
    if len(config.modes) < 2:
        raise ValueError('a sweep needs at least two modes')
    os.makedirs(config.outdir, exist_ok=True)
    cost_rows = []
    costs = {}
    for lc, nu in config.cases:
        sampler = None
        for method in config.modes:
            for eps in config.tolerances:
                for seed in config.seeds:
                    path = os.path.join(config.outdir, run_tag(method, lc, nu, eps, seed) + '.json')
                    status, total = 'failed', math.nan
                    try:
                        m = _load_manifest(path) if resume and os.path.exists(path) else None
                    except (OSError, ValueError):
                        m = None
                    try:
                        if m is None:
                            sampler = sampler or make_sampler(config, lc, nu)
                            res, _ = cmd_run(config, method, lc, nu, eps, seed, sampler)
                            status = 'converged' if res.converged else 'nonconverged'
                            total = res.total_cost
                        else:
                            status, total = m['status'], m['result']['total_cost']
                    except Exception as exc:
                        log.error('%s %s eps=%g seed=%d failed: %s', method,
                                  case_tag(lc, nu), eps, seed, exc)
                    cost_rows.append([method, lc, nu, eps, seed, status, total])
                    if status == 'converged':
                        costs.setdefault((lc, nu, method, eps), []).append(total)
    write_csv(os.path.join(config.outdir, 'sweep_costs.csv'), 'sweep-costs',
              COST_HEADER, cost_rows)
    rows = [speedup_row(costs, lc, nu, config.tolerances) for lc, nu in config.cases]
    write_csv(os.path.join(config.outdir, 'speedups.csv'), 'speedups',
              SPEEDUP_HEADER, rows)
    return cost_rows, rows


def speedup_row(costs, lc, nu, tolerances):
    """S1, S2, S3 averaged over the tolerances where all needed runs converged."""
    s = {1: [], 2: [], 3: []}
    for eps in tolerances:
        c = [np.mean(costs[(lc, nu, m, eps)]) if (lc, nu, m, eps) in costs else math.nan
             for m in ('MLMC', 'MLQMC', 'MG-MLQMC')]
        if np.isfinite(c[1]) and np.isfinite(c[2]):
            if np.isfinite(c[0]):
                s1, s2, s3 = speedups(*c)
                s[1].append(s1)
                s[2].append(s2)
            else:
                s3 = c[1]/c[2]
            s[3].append(s3)
    mean = [float(np.mean(v)) if v else math.nan for v in (s[1], s[2], s[3])]
    # Averages of S1 and S3 do not multiply to the average of S2; report
    # S2 as the product so the identity holds row by row.
    if np.isfinite(mean[0]) and np.isfinite(mean[2]):
        mean[1] = mean[0]*mean[2]
    return [lc, nu, *mean, len(s[3])]


# REPORT

def cmd_report(outdir):
    """Collect all manifests in ``outdir`` into ``summary.csv`` and ``report.txt``."""
    rows = []
    for path in sorted(glob.glob(os.path.join(outdir, 'run_*.json'))):
        try:
            m = _load_manifest(path)
            r = m['result']
            rows.append([os.path.basename(path), m['method'], m['lc'], m['nu'],
                         m['eps'], m['seed'], r['converged'], r['estimate'],
                         r['variance'], r['bias'], r['alpha'], r['L'],
                         r['total_cost']])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            log.warning('skipping %s: %s', path, exc)
    os.makedirs(outdir, exist_ok=True)
    write_csv(os.path.join(outdir, 'summary.csv'), 'summary', REPORT_HEADER, rows)
    lines = [f'{len(rows)} run(s) in {outdir}']
    for row in rows:
        lines.append(f'{row[1]:9s} lc={row[2]:<4g} nu={row[3]:<4g} eps={row[4]:<8g} '
                     f'seed={row[5]} Q={row[7]:.8g} var={row[8]:.3e} '
                     f'bias={row[9]:.3e} L={row[11]} cost={row[12]:.4g}'
                     + ('' if row[6] else '  NONCONVERGED'))
    _atomic_write(os.path.join(outdir, 'report.txt'), '\n'.join(lines) + '\n')
    return rows
