"""Backend selection for the compiled kernels.

Set ``AQUASI_DISABLE_NUMBA=1`` to force the pure-numpy code paths. When numba
cannot be imported the numpy paths are used as well.
"""
from __future__ import annotations

import os

_FALSY = {"", "0", "false", "no", "off"}


def _numba_requested() -> bool:
    return os.environ.get("AQUASI_DISABLE_NUMBA", "").strip().lower() in _FALSY


try:
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _numba_requested()


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise."""
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)


def thread_cap() -> int:
    """Worker cap from ``AQUASI_THREADS`` (defaults to the CPU count)."""
    raw = os.environ.get("AQUASI_THREADS")
    ncpu = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    if raw is None:
        return max(1, ncpu)
    try:
        return max(1, int(raw))
    except ValueError:
        return max(1, ncpu)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
