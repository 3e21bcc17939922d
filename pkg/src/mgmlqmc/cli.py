"""``uq``: command-line front end.

Settings come from built-in defaults, then an optional JSON file
(``--config``), then the ``UQ_OUTDIR`` / ``UQ_WORKERS`` environment
variables, then command-line flags.
"""
import argparse
import logging
import os
import sys

from mgmlqmc import experiments
from mgmlqmc.estimators import METHODS

EXIT_OK, EXIT_ERROR, EXIT_NONCONVERGED = 0, 1, 2


def _case(text):
    try:
        lc, nu = (float(t) for t in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected LC,NU, got {text!r}')
    return lc, nu


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON experiment configuration')
    common.add_argument('--outdir')
    common.add_argument('--workers', type=int)
    common.add_argument('--seed', type=int, action='append', dest='seeds',
                        help='repeatable')
    common.add_argument('--case', type=_case, action='append', dest='cases',
                        metavar='LC,NU', help='repeatable')
    common.add_argument('--eps', type=float, action='append', dest='tolerances',
                        help='repeatable')
    common.add_argument('--mode', action='append', dest='modes',
                        choices=sorted(METHODS), help='repeatable')
    common.add_argument('--R', type=int)
    common.add_argument('--nq', type=int, dest='n_q')
    common.add_argument('--max-level', type=int, dest='max_level')
    common.add_argument('--max-cost', type=float, dest='max_cost')
    common.add_argument('--cost', choices=['work', 'time'])
    common.add_argument('--pilot', type=int)
    common.add_argument('--rate-levels', type=int, dest='rate_levels')
    common.add_argument('-v', '--verbose', action='store_true')

    p = argparse.ArgumentParser(prog='uq', description='Multilevel (Q)MC for '
                                'lognormal diffusion with sample recycling.')
    sub = p.add_subparsers(dest='command', required=True)
    sub.add_parser('rates', parents=[common], help='pilot statistics and rate fits')
    sub.add_parser('run', parents=[common], help='one adaptive run per mode')
    sub.add_parser('sweep', parents=[common], help='tolerance sweep and speedups')
    sub.add_parser('report', parents=[common], help='summarize manifests in outdir')
    return p


def load_config(args, environ=os.environ):
    config = (experiments.ExperimentConfig.from_json(args.config) if args.config
              else experiments.ExperimentConfig())
    env = {}
    if environ.get('UQ_OUTDIR'):
        env['outdir'] = environ['UQ_OUTDIR']
    if environ.get('UQ_WORKERS'):
        env['workers'] = int(environ['UQ_WORKERS'])
    config = config.replace(**env)
    names = ['outdir', 'workers', 'seeds', 'cases', 'tolerances', 'modes', 'R',
             'n_q', 'max_level', 'max_cost', 'cost', 'pilot', 'rate_levels']
    return config.replace(**{k: getattr(args, k) for k in names})


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        config = load_config(args)
        if args.command == 'rates':
            experiments.cmd_rates(config)
            return EXIT_OK
        if args.command == 'report':
            rows = experiments.cmd_report(config.outdir)
            print(f'{len(rows)} run(s) summarized in {config.outdir}')
            return EXIT_OK
        if args.command == 'sweep':
            cost_rows, _ = experiments.cmd_sweep(config)
            bad = [r for r in cost_rows if r[5] != 'converged']
            return EXIT_NONCONVERGED if bad else EXIT_OK
        status = EXIT_OK
        for lc, nu in config.cases:
            sampler = experiments.make_sampler(config, lc, nu)
            for method in config.modes:
                for eps in config.tolerances:
                    for seed in config.seeds:
                        res, paths = experiments.cmd_run(config, method, lc, nu,
                                                         eps, seed, sampler)
                        print(f'{method} {experiments.case_tag(lc, nu)} eps={eps:g} '
                              f'seed={seed}: Q={res.estimate:.8g} L={res.L} '
                              f'cost={res.total_cost:.4g} -> {paths["manifest"]}')
                        if not res.converged:
                            status = EXIT_NONCONVERGED
        return status
    except (OSError, ValueError, RuntimeError) as exc:
        print(f'uq: error: {exc}', file=sys.stderr)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
