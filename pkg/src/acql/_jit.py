"""Numba switch.

Set ``ACQL_DISABLE_NUMBA=1`` to run every kernel as plain numpy code.
"""
import os

_DISABLED = os.environ.get("ACQL_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _numba_njit

    NUMBA_ENABLED = True
except ImportError:
    _numba_njit = None
    NUMBA_ENABLED = False


def maybe_njit(func):
    """Compile ``func`` with numba when available, otherwise return it untouched.

    The uncompiled function stays reachable as ``func.py_func`` either way so the
    benchmark can time both paths in one process.
    """
    if NUMBA_ENABLED:
        compiled = _numba_njit(cache=True, nogil=True)(func)
        return compiled
    func.py_func = func
    return func
