"""Optional numba acceleration.

Hot kernels are written once in numpy-compatible style. When numba is
importable and ``SOISEP_DISABLE_NUMBA`` is unset (or ``0``), they are
compiled with ``numba.njit``; otherwise the plain Python/numpy function
is used unchanged.
"""

import os

_FLAG = "SOISEP_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    HAVE_NUMBA = False


def numba_enabled():
    return HAVE_NUMBA and os.environ.get(_FLAG, "0").strip().lower() in ("", "0", "false", "no")


USE_NUMBA = numba_enabled()


def compile_kernel(fn):
    """Return ``njit(fn)`` if numba is available, else ``fn`` itself."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)


def select(py_fn, jit_fn):
    return jit_fn if USE_NUMBA else py_fn
