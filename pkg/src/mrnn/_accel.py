"""Optional numba acceleration.

Set ``MRNN_DISABLE_NUMBA=1`` before import to run every kernel through the
pure-numpy path. Numba is also skipped silently when it is not installed.
"""

import os

_disabled = os.environ.get("MRNN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False
    _njit = None


def njit(fn):
    """Compile ``fn`` with numba when enabled, otherwise return it unchanged."""
    if HAS_NUMBA:
        return _njit(cache=True, nogil=True)(fn)
    return fn


BACKEND = "numba" if HAS_NUMBA else "numpy"
