import json
import math
import os

import numpy as np
import pytest

from mgmlqmc import cli, experiments
from mgmlqmc.experiments import (ExperimentConfig, cmd_report, level_statistics,
                                 read_csv, speedup_row)
from mgmlqmc.problem import ConstantCoefficientSampler

SMALL = ['--case', '0.5,2', '--nq', '8', '--R', '4']

GOLDEN = {
    'levels': ('# mgmlqmc-levels v1',
               'level,N,fresh_solves,effective_samples,recycled_percent,V,C,upsilon_bar'),
    'summary': ('# mgmlqmc-summary v1',
                'method,lc,nu,eps,seed,converged,estimate,variance,bias,alpha,L,total_cost'),
    'rates': ('# mgmlqmc-rates v1', 'lc,nu,alpha,beta,gamma,lambda,predicted_reduction'),
    'rate-levels': ('# mgmlqmc-rate-levels v1', 'level,h,mean_F,var_F,mean_dF,var_dF,cost'),
    'rate-curves': ('# mgmlqmc-rate-curves v1', 'level,N,variance'),
    'sweep-costs': ('# mgmlqmc-sweep-costs v1', 'method,lc,nu,eps,seed,status,total_cost'),
    'speedups': ('# mgmlqmc-speedups v1', 'lc,nu,S1,S2,S3,n_tolerances'),
    'report': ('# mgmlqmc-summary v1',
               'manifest,method,lc,nu,eps,seed,converged,estimate,variance,bias,alpha,L,total_cost'),
}


def head(path):
    with open(path) as fh:
        return fh.readline().rstrip('\n'), fh.readline().rstrip('\n')


@pytest.fixture
def cache(kl_cache):
    return kl_cache


def test_run_writes_consistent_tables(tmp_path, cache):
    code = cli.main(['run', *SMALL, '--mode', 'MG-MLQMC', '--eps', '5e-3', '--seed', '7',
                     '--outdir', str(tmp_path)])
    assert code == 0
    tag = 'run_MG-MLQMC_lc0.5_nu2_eps0.005_seed7'
    assert head(tmp_path / f'{tag}_levels.csv') == GOLDEN['levels']
    assert head(tmp_path / f'{tag}_summary.csv') == GOLDEN['summary']
    _, rows = read_csv(tmp_path / f'{tag}_levels.csv')
    N = [int(r['N']) for r in rows]
    for ell, row in enumerate(rows):
        expected = 100.0*sum(N[ell + 1:])/sum(N[ell:])
        assert float(row['recycled_percent']) == pytest.approx(expected, abs=1e-12)
        assert int(row['fresh_solves']) == N[ell]
        assert int(row['effective_samples']) == sum(N[ell:])
    manifest = json.loads((tmp_path / f'{tag}.json').read_text())
    assert manifest['status'] == 'converged'
    assert manifest['result']['N'] == N


def test_rerun_is_byte_identical(tmp_path, cache):
    args = ['run', *SMALL, '--mode', 'MLQMC', '--eps', '5e-3', '--seed', '1']
    outs = []
    for sub, workers in (('a', '1'), ('b', '1'), ('c', '2')):
        assert cli.main(args + ['--workers', workers, '--outdir', str(tmp_path / sub)]) == 0
        outs.append({f: (tmp_path / sub / f).read_bytes()
                     for f in os.listdir(tmp_path / sub) if f.endswith('.csv')})
    assert outs[0] == outs[1] == outs[2]


def test_nonconvergence_exit_code(tmp_path, cache):
    code = cli.main(['run', *SMALL, '--mode', 'MLMC', '--eps', '1e-4', '--max-cost', '1e5',
                     '--outdir', str(tmp_path)])
    assert code == 2
    m = json.loads(next(tmp_path.glob('run_*.json')).read_text())
    assert m['status'] == 'nonconverged'


def test_error_exit_code(tmp_path):
    cfg = tmp_path / 'bad.json'
    cfg.write_text(json.dumps({'bogus': 1}))
    assert cli.main(['run', '--config', str(cfg), '--outdir', str(tmp_path)]) == 1
    assert cli.main(['run', '--case', '0.5,0.7', '--outdir', str(tmp_path)]) == 1


def test_config_file_and_env_overrides(tmp_path, monkeypatch):
    cfg = tmp_path / 'c.json'
    cfg.write_text(json.dumps({'R': 7, 'tolerances': [1e-2, 1e-3], 'workers': 2}))
    monkeypatch.setenv('UQ_OUTDIR', str(tmp_path / 'env'))
    monkeypatch.setenv('UQ_WORKERS', '5')
    args = cli.build_parser().parse_args(['run', '--config', str(cfg)])
    c = cli.load_config(args)
    assert c.R == 7 and c.tolerances == [1e-2, 1e-3]
    assert c.outdir == str(tmp_path / 'env') and c.workers == 5
    args = cli.build_parser().parse_args(['run', '--config', str(cfg), '--workers', '3',
                                          '--outdir', 'x'])
    c = cli.load_config(args)
    assert c.workers == 3 and c.outdir == 'x'


def test_experiment_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(tolerances=[1e-3, 1e-2])
    with pytest.raises(ValueError):
        ExperimentConfig(tolerances=[-1.0])
    with pytest.raises(ValueError):
        ExperimentConfig(modes=['QMC'])
    c = ExperimentConfig()
    assert c.tolerances == [1e-3, 5e-4, 2.5e-4, 1.25e-4]
    assert len(c.cases) == 9 and c.R == 20


def test_rates_files(tmp_path, cache):
    code = cli.main(['rates', *SMALL, '--pilot', '4', '--rate-levels', '3',
                     '--outdir', str(tmp_path)])
    assert code == 0
    assert head(tmp_path / 'rates.csv') == GOLDEN['rates']
    assert head(tmp_path / 'rates_lc0.5_nu2_levels.csv') == GOLDEN['rate-levels']
    assert head(tmp_path / 'rates_lc0.5_nu2_curves.csv') == GOLDEN['rate-curves']
    _, rows = read_csv(tmp_path / 'rates_lc0.5_nu2_levels.csv')
    assert [int(r['level']) for r in rows] == [0, 1, 2, 3]
    _, rows = read_csv(tmp_path / 'rates.csv')
    assert len(rows) == 1 and float(rows[0]['gamma']) > 0


def test_deterministic_stub_statistics():
    sampler = ConstantCoefficientSampler(s=2, max_level=3)
    hist = level_statistics(sampler, 3, 2, 3)
    from mgmlqmc.multigrid import CoefficientSample, GridHierarchy, fmg_solve
    q = fmg_solve(CoefficientSample.constant(GridHierarchy(4), 3), 3).qois
    np.testing.assert_allclose(hist['mean_F'], q, rtol=1e-14)
    np.testing.assert_allclose(hist['mean'], np.diff(q, prepend=0.0), rtol=1e-12, atol=1e-16)
    assert max(hist['var_F']) <= 1e-28


def test_speedup_table_rows():
    costs = {(0.5, 2.0, m, 1e-3): [5.0] for m in ('MLMC', 'MLQMC', 'MG-MLQMC')}
    assert speedup_row(costs, 0.5, 2.0, [1e-3]) == [0.5, 2.0, 1.0, 1.0, 1.0, 1]
    costs = {(0.5, 2.0, 'MLMC', e): [8.0*k] for k, e in ((1, 1e-3), (3, 5e-4))}
    costs.update({(0.5, 2.0, 'MLQMC', e): [4.0*k] for k, e in ((1, 1e-3), (2, 5e-4))})
    costs.update({(0.5, 2.0, 'MG-MLQMC', e): [2.0*k] for k, e in ((1, 1e-3), (5, 5e-4))})
    row = speedup_row(costs, 0.5, 2.0, [1e-3, 5e-4])
    assert row[2] == pytest.approx((2 + 3)/2)
    assert row[4] == pytest.approx((2 + 0.8)/2)
    assert row[3] == pytest.approx(row[2]*row[4], rel=1e-12)
    assert math.isnan(speedup_row({}, 0.5, 2.0, [1e-3])[2])


def test_sweep_and_report(tmp_path, cache):
    out = str(tmp_path)
    code = cli.main(['sweep', *SMALL, '--mode', 'MLQMC', '--mode', 'MG-MLQMC',
                     '--eps', '8e-3', '--eps', '2e-3', '--outdir', out])
    assert code == 0
    assert head(tmp_path / 'sweep_costs.csv') == GOLDEN['sweep-costs']
    assert head(tmp_path / 'speedups.csv') == GOLDEN['speedups']
    _, rows = read_csv(tmp_path / 'sweep_costs.csv')
    assert len(rows) == 4 and all(r['status'] == 'converged' for r in rows)
    for method in ('MLQMC', 'MG-MLQMC'):
        c = {float(r['eps']): float(r['total_cost']) for r in rows if r['method'] == method}
        assert c[2e-3] >= 0.9*c[8e-3]
    _, sp = read_csv(tmp_path / 'speedups.csv')
    assert math.isnan(float(sp[0]['S1'])) and float(sp[0]['S3']) > 0

    # A second sweep resumes from the manifests.
    before = {p: os.path.getmtime(p) for p in tmp_path.glob('run_*.json')}
    assert cli.main(['sweep', *SMALL, '--mode', 'MLQMC', '--mode', 'MG-MLQMC',
                     '--eps', '8e-3', '--eps', '2e-3', '--outdir', out]) == 0
    assert before == {p: os.path.getmtime(p) for p in tmp_path.glob('run_*.json')}

    assert cli.main(['report', '--outdir', out]) == 0
    assert head(tmp_path / 'summary.csv') == GOLDEN['report']
    first = (tmp_path / 'summary.csv').read_bytes(), (tmp_path / 'report.txt').read_bytes()
    assert len(read_csv(tmp_path / 'summary.csv')[1]) == 4
    assert cli.main(['report', '--outdir', out]) == 0
    assert first == ((tmp_path / 'summary.csv').read_bytes(), (tmp_path / 'report.txt').read_bytes())


def test_sweep_needs_two_modes(tmp_path):
    assert cli.main(['sweep', '--mode', 'MLQMC', '--outdir', str(tmp_path)]) == 1


def test_report_empty_two_and_corrupt(tmp_path, cache):
    rows = cmd_report(str(tmp_path))
    assert rows == []
    assert head(tmp_path / 'summary.csv') == GOLDEN['report']
    assert len(read_csv(tmp_path / 'summary.csv')[1]) == 0
    cfg = ExperimentConfig(cases=[(0.5, 2.0)], n_q=8, R=4, outdir=str(tmp_path),
                           cache_dir=cache)
    experiments.cmd_run(cfg, 'MLQMC', 0.5, 2.0, 5e-3, 0)
    experiments.cmd_run(cfg, 'MG-MLQMC', 0.5, 2.0, 5e-3, 0)
    (tmp_path / 'run_broken.json').write_text('{not json')
    rows = cmd_report(str(tmp_path))
    assert len(rows) == 2
    assert len(read_csv(tmp_path / 'summary.csv')[1]) == 2
