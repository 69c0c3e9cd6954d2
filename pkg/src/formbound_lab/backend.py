"""Kernel backend selection: numba-jitted loops or pure-numpy fallbacks.

The backend is chosen once at import time from the environment variable
``FORMBOUND_LAB_BACKEND`` ("numba" or "numpy", default "numba" when numba
imports cleanly).  ``force_backend`` switches it at runtime, which the
benchmark and the backend-agreement tests use to exercise both paths in
one process.
"""

import os
from contextlib import contextmanager


def _noop_njit(*args, **kwargs):
    if args and callable(args[0]):
        return args[0]

    def wrap(f):
        return f

    return wrap


def _numba_available():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


HAVE_NUMBA = _numba_available()

if HAVE_NUMBA:
    from numba import njit
else:
    njit = _noop_njit

_env = os.environ.get("FORMBOUND_LAB_BACKEND", "numba").strip().lower()
_ACTIVE = "numba" if (HAVE_NUMBA and _env not in ("numpy", "off", "0")) else "numpy"
if _env == "numba" and not HAVE_NUMBA:
    import warnings

    warnings.warn("numba requested but not importable; using numpy fallbacks")


def active_backend():
    return _ACTIVE


def numba_active():
    return _ACTIVE == "numba"


def set_backend(name):
    global _ACTIVE
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    _ACTIVE = name


@contextmanager
def force_backend(name):
    prev = _ACTIVE
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)
