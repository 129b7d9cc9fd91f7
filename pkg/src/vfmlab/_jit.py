"""Numba dispatch layer.

Every hot kernel in :mod:`vfmlab.kernels` is written once, in numba-compatible
style, and wrapped with :func:`maybe_jit`.  By default the wrapper applies
``numba.njit(cache=True)``.  Setting the environment variable
``VFMLAB_DISABLE_NUMBA=1`` (checked once, at import time) selects the pure
numpy/python lane instead: the undecorated function itself.  Both lanes run
the identical source, so results agree to floating-point reassociation.

``bench/bench_kernels.py`` times the two lanes against each other.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("VFMLAB_DISABLE_NUMBA", "").strip().lower()
NUMBA_ENABLED = _FLAG not in ("1", "true", "yes")

if NUMBA_ENABLED:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but degrade gracefully
        NUMBA_ENABLED = False


def maybe_jit(func):
    """Return ``njit(cache=True)(func)`` or ``func`` itself per the env flag."""
    if NUMBA_ENABLED:
        return _njit(cache=True)(func)
    return func
