"""Switch between numba-compiled kernels and their pure-numpy/python fallback.

Set ``LDME_DISABLE_NUMBA=1`` in the environment (before importing ``ldme``)
to run every kernel through its uncompiled path.  Results are identical on
both paths; only the speed differs.
"""

import os

_DISABLED = os.environ.get("LDME_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by LDME_DISABLE_NUMBA")
    import numba

    NUMBA_OK = True
except ImportError:
    numba = None
    NUMBA_OK = False


def jit(func):
    """Compile ``func`` with ``numba.njit`` when available, else return it as is.

    Every kernel is written in the numba-compatible subset of numpy, so the
    uncompiled function is the fallback itself.
    """
    if NUMBA_OK:
        return numba.njit(cache=True)(func)
    return func


def backend_name() -> str:
    return "numba" if NUMBA_OK else "numpy"
