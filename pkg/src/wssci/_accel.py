"""Backend selection for the numeric kernels.

Set ``WSSCI_DISABLE_NUMBA=1`` to force the pure-numpy path. Numba is also
skipped automatically when it cannot be imported.
"""

from __future__ import annotations

import os

_DISABLED = os.environ.get("WSSCI_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by WSSCI_DISABLE_NUMBA")
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    _njit = None
    HAS_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAS_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
