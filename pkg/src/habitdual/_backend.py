"""Kernel backend selection.

Hot inner loops (projected SOR sweeps, tridiagonal solves, Monte-Carlo path
stepping) have a numba implementation and a pure-numpy fallback.  Set the
environment variable ``HABITDUAL_NUMBA=0`` to force the numpy path; otherwise
numba is used when importable.  ``benchmarks/bench_kernels.py`` compares the
two.
"""

import os

_flag = os.environ.get("HABITDUAL_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "no", "off")

NUMBA_ENABLED = False
if _want_numba:
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
