"""Backend switch for the compiled kernels.

The hot loops (multistart Newton on the section gradient, conditional
top-eigenvalue quadrature) exist twice: a numba ``@njit`` version and a
vectorised numpy version. ``HOLOCRIT_NUMBA=0`` forces the numpy path.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

HAVE_NUMBA = numba is not None


def _env_enabled():
    value = os.environ.get("HOLOCRIT_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _env_enabled()


def use_numba():
    return USE_NUMBA


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` at runtime (tests, benchmarks)."""
    global USE_NUMBA
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    USE_NUMBA = name == "numba"


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` with caching and GIL release; identity without numba."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return numba.njit(*args, **kwargs)
