"""Numba switch.

Hot kernels are decorated with :func:`njit`.  When numba is importable and the
``CAFEDSIM_NUMBA`` environment variable is not ``0``, they are JIT-compiled;
otherwise the very same function bodies run as plain numpy/Python.  The flag is
read once at import time.
"""

from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("CAFEDSIM_NUMBA", "1") != "0"


def njit(fn):
    if USE_NUMBA:
        return numba.njit(cache=False, nogil=True)(fn)
    return fn


def python_impl(fn):
    """Return the uncompiled body of a kernel (identity when numba is off)."""
    return getattr(fn, "py_func", fn)
