"""Backend selection for the hot numeric kernels.

Set ``UNCTRAJ_DISABLE_NUMBA=1`` to force the pure-numpy path (useful when
debugging or when numba is not installed). Both paths are kept
numerically equivalent and are cross-checked in the test-suite.
"""

import os

_FLAG = os.environ.get("UNCTRAJ_DISABLE_NUMBA", "").strip().lower()

try:
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _njit = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache=True``; identity decorator without numba."""
    kwargs.setdefault("cache", True)
    if _njit is None:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return _njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
