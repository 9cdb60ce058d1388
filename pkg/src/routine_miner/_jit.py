"""Kernel backend selection.

Hot loops are written twice: a scalar loop compiled with numba, and a
numpy path used when numba is missing or ``ROUTINE_MINER_NO_JIT`` is set
to a truthy value. Both paths perform the same floating point operations in
the same order, so they return bit-identical results.
"""

from __future__ import annotations

import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
JIT_DISABLED = os.environ.get("ROUTINE_MINER_NO_JIT", "").strip().lower() not in _FALSY
USE_JIT = HAVE_NUMBA and not JIT_DISABLED
BACKEND = "numba" if USE_JIT else "numpy"


def njit(fn):
    """Compile ``fn`` with numba when available; otherwise return it unchanged."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def pick(jitted, fallback):
    return jitted if USE_JIT else fallback
