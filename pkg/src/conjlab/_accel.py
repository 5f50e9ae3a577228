"""Optional numba acceleration.

Hot kernels are written once in a numba-compatible subset of numpy and
compiled with ``njit`` when numba is importable.  Setting the environment
variable ``CONJLAB_DISABLE_NUMBA=1`` (read at import time) forces the pure
numpy implementations everywhere.  ``CONJLAB_THREADS`` caps the number of
threads numba may use for ``prange`` loops.
"""
from __future__ import annotations

import os
import warnings

_FLAG = os.environ.get("CONJLAB_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if DISABLED:
        raise ImportError("numba disabled by CONJLAB_DISABLE_NUMBA")
    import numba as _numba
    # an old system TBB only triggers a fallback to another threading layer
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:
    _numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        # Supports both ``@njit`` and ``@njit(cache=True, ...)``.
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap

    prange = range


def set_threads(count: int | None = None) -> int:
    """Apply ``CONJLAB_THREADS`` (or ``count``) to numba; return threads in use."""
    if count is None:
        raw = os.environ.get("CONJLAB_THREADS", "").strip()
        count = int(raw) if raw else None
    if not HAVE_NUMBA:
        return 1
    if count is not None:
        count = max(1, min(int(count), _numba.config.NUMBA_NUM_THREADS))
        _numba.set_num_threads(count)
    return _numba.get_num_threads()


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
