"""Backend selection for the hot numeric kernels.

Numba is used when importable unless ``HRB_DISABLE_NUMBA`` is set to a
truthy value, in which case every kernel falls back to its pure-numpy
implementation. The flag is read once at import time.
"""

import os

_FLAG = os.environ.get("HRB_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG in {"1", "true", "yes", "on"}

try:
    if NUMBA_DISABLED:
        raise ImportError("numba disabled via HRB_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        # bare @njit and @njit(...) both become no-ops
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def backend_name():
    return "numba" if HAS_NUMBA else "numpy"
