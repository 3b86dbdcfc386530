"""Numba switch shared by the hot kernels.

Set ``PGMATCH_DISABLE_NUMBA=1`` to force the pure-numpy code paths.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

_DISABLED = os.environ.get("PGMATCH_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

HAS_NUMBA = numba is not None
USE_NUMBA = HAS_NUMBA and not _DISABLED


def njit(fn):
    """``numba.njit(cache=True, nogil=True)`` when numba is available, else identity."""
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend():
    return "numba" if USE_NUMBA else "numpy"
