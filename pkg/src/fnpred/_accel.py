"""Acceleration switch for the numeric kernels.

Kernels are written as plain-numpy functions with explicit loops so that the
exact same body can either be JIT-compiled with numba or run interpreted.
Both paths execute identical floating-point operations in identical order,
so results are bit-for-bit equal.

Set the environment variable ``FNPRED_NO_NUMBA=1`` (before import) to force
the interpreted fallback, e.g. on platforms where numba is unavailable or
when debugging a kernel.
"""

from __future__ import annotations

import os

NUMBA_ENV_FLAG = "FNPRED_NO_NUMBA"


def _disabled_by_env() -> bool:
    return os.environ.get(NUMBA_ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    if _disabled_by_env():
        raise ImportError(f"numba disabled via {NUMBA_ENV_FLAG}")
    from numba import njit as _njit

    USING_NUMBA = True
except ImportError:
    USING_NUMBA = False
    _njit = None


def maybe_jit(func):
    """Return ``func`` JIT-compiled when numba is active, unchanged otherwise."""
    if USING_NUMBA:
        return _njit(cache=True)(func)
    return func
