"""Backend selection for the hot numeric kernels.

Set ``REFOCUS_NUMBA=0`` before import to force the pure-numpy path even when
numba is installed.
"""
import logging
import os

logger = logging.getLogger(__name__)

_requested = os.environ.get("REFOCUS_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a soft dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = _requested and HAVE_NUMBA

if _requested and not HAVE_NUMBA:  # pragma: no cover
    logger.warning("numba not importable, falling back to numpy kernels")


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
