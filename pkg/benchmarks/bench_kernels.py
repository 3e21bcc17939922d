"""Time the numba kernels against the pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--m 256] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from mgmlqmc import core


def grid(m, seed=0):
    rng = np.random.default_rng(seed)
    u = np.zeros((m + 1, m + 1))
    u[1:-1, 1:-1] = rng.standard_normal((m - 1, m - 1))
    b = rng.standard_normal(u.shape)
    ax = np.exp(rng.standard_normal((m, m + 1)))
    ay = np.exp(rng.standard_normal((m + 1, m)))
    return u, b, ax, ay


def cases(m, n_eig):
    u, b, ax, ay = grid(m)
    h2 = 1.0/m**2
    r = np.zeros_like(u)
    rc = np.zeros((m//2 + 1, m//2 + 1))
    ef = np.zeros_like(u)
    a = np.random.default_rng(1).standard_normal((n_eig, n_eig))
    a = a + a.T
    return {
        'sgs_sweep': lambda k: k(u.copy(), b, ax, ay, h2),
        'residual': lambda k: k(u, b, ax, ay, h2, r),
        'restrict_fw': lambda k: k(u, rc),
        'prolongate_bilinear': lambda k: k(rc, ef),
        'jacobi_eigh': lambda k: k(a.copy(), 1e-13, 50),
    }


def main():
    p = argparse.ArgumentParser()
    p.add_argument('--m', type=int, default=256, help='grid intervals per side')
    p.add_argument('--n-eig', type=int, default=120, help='matrix size for jacobi')
    p.add_argument('--repeat', type=int, default=5)
    args = p.parse_args()
    if not core.NUMBA:
        raise SystemExit('numba disabled (MGMLQMC_NO_NUMBA set or numba missing)')

    print(f'{"kernel":22s} {"numpy [ms]":>12s} {"numba [ms]":>12s} {"speedup":>9s}')
    for name, call in cases(args.m, args.n_eig).items():
        call(core.NUMBA[name])  # compile
        t = {}
        for label, table in (('numpy', core.NUMPY), ('numba', core.NUMBA)):
            t[label] = min(timeit.repeat(lambda: call(table[name]), number=1,
                                         repeat=args.repeat))
        print(f'{name:22s} {1e3*t["numpy"]:12.3f} {1e3*t["numba"]:12.3f} '
              f'{t["numpy"]/t["numba"]:9.1f}')


if __name__ == '__main__':
    main()
