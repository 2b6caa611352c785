"""Switch between numba-compiled kernels and the plain numpy path.

Set ``ADSBTRACK_DISABLE_NUMBA=1`` before import to run every kernel as
ordinary Python/numpy.  Both paths execute the same source.
"""

import os

_FLAG = os.environ.get("ADSBTRACK_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_ENABLED = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def jit(fn):
    """Compile ``fn`` in nopython mode when numba is enabled."""
    if NUMBA_ENABLED:
        return numba.njit(cache=True)(fn)
    return fn
