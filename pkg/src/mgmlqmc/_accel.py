"""Numba switch.

Hot kernels in :mod:`mgmlqmc.core` are compiled with numba unless the
environment variable ``MGMLQMC_NO_NUMBA`` is set to a truthy value (or numba is
not importable), in which case the pure-numpy implementations are used.
"""
import os

__all__ = ['USE_NUMBA', 'njit']

_flag = os.environ.get('MGMLQMC_NO_NUMBA', '').strip().lower()
_disabled = _flag not in ('', '0', 'false', 'no')

try:
    if _disabled:
        raise ImportError
    from numba import njit as _numba_njit
    USE_NUMBA = True
except ImportError:
    _numba_njit = None
    USE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` or ``None`` when numba is off.

    Returning ``None`` lets the caller pick its numpy fallback explicitly.
    """
    if not USE_NUMBA:
        return lambda func: None
    kwargs.setdefault('cache', True)
    return _numba_njit(*args, **kwargs)
