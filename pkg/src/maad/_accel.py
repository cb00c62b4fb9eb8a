"""Optional numba acceleration.

Hot loops (SMO solver, kinematic rollout) come in two flavours: an explicit
loop compiled with ``numba.njit`` and a vectorised numpy fallback.  The
active path is chosen once at import time from the ``MAAD_NUMBA``
environment variable (``0`` disables numba, anything else enables it when
numba is importable).
"""
import os

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    numba = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("MAAD_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)


def njit(func):
    """Compile ``func`` with numba when available, else return it untouched."""
    if NUMBA_AVAILABLE:
        return numba.njit(cache=True)(func)
    return func


__all__ = ["njit", "USE_NUMBA", "NUMBA_AVAILABLE"]
