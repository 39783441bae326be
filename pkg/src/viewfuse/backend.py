"""Optional numba acceleration shim.

The package runs on plain numpy everywhere; a handful of hot kernels in
:mod:`viewfuse.kernels` have numba twins. Importing numba is attempted once
here. The environment variable ``VIEWFUSE_NUMBA`` overrides the default
backend choice: ``0`` forces the pure-numpy path even when numba is
installed, ``1`` demands numba and fails loudly if it is missing. Anything
else (or unset) selects numba when importable.
"""

from __future__ import annotations

import os

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        # No-op decorator stand-in so kernel modules import cleanly.
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap


def default_backend() -> str:
    """Backend selected by the environment: 'numba' or 'numpy'."""
    flag = os.environ.get("VIEWFUSE_NUMBA", "").strip()
    if flag == "0":
        return "numpy"
    if flag == "1":
        if not HAS_NUMBA:
            raise RuntimeError("VIEWFUSE_NUMBA=1 but numba is not importable")
        return "numba"
    return "numba" if HAS_NUMBA else "numpy"
