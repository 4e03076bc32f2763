"""Backend selection for the compiled kernels.

Set ``ALCURVE_NUMBA=0`` before import to force the pure-numpy paths. When
numba is missing the numpy paths are used regardless of the flag.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba ships with the dev environment
    numba = None
    HAVE_NUMBA = False


def _flag_enabled(value):
    return value.strip().lower() not in ("0", "false", "no", "off", "")


USE_NUMBA = HAVE_NUMBA and _flag_enabled(os.environ.get("ALCURVE_NUMBA", "1"))


def njit(func):
    """Compile ``func`` in nopython mode when numba is installed.

    The raw Python function is returned otherwise, which keeps the kernels
    importable (and testable, slowly) without numba.
    """
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True, fastmath=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
