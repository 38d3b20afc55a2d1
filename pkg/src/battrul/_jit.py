"""Numba switch.

Set ``BATTRUL_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time; the same path is used for the whole process.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

DISABLED_BY_ENV = os.environ.get("BATTRUL_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
HAS_NUMBA = numba is not None
USE_NUMBA = HAS_NUMBA and not DISABLED_BY_ENV


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is importable, else return it as-is."""
    if numba is None:
        return fn
    return numba.njit(cache=True)(fn)
