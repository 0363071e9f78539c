"""Kernel backend selection.

The hot inner loops exist twice: a numba ``@njit`` lane and a vectorized
pure-numpy lane with identical signatures.  The environment variable
``ORIGAMIRC_BACKEND`` picks one (``numba`` or ``numpy``); unset, numba is
used when importable and numpy otherwise.
"""

import os

ENV_VAR = "ORIGAMIRC_BACKEND"


def _select():
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(
            f"{ENV_VAR} must be 'numba' or 'numpy', got {choice!r}")
    if choice != "numpy":
        try:
            from . import _kernels_numba as kernels
            return kernels, "numba"
        except ImportError:
            if choice == "numba":
                raise
    from . import _kernels_numpy as kernels
    return kernels, "numpy"


kernels, BACKEND = _select()


def backend_name():
    """Name of the active kernel lane, 'numba' or 'numpy'."""
    return BACKEND
