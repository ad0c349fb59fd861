"""Hot numerical kernels: tridiagonal solve, projected SOR, policy-table lookup.

Each kernel has a numba ``@njit`` version and a vectorized numpy fallback;
``_backend.NUMBA_ENABLED`` picks which one is exported.  The numpy projected
SOR uses red-black ordering (vectorizable); both variants converge to the
same complementarity solution, only the iterates differ.
"""

from __future__ import annotations

import numpy as np

from ._backend import NUMBA_ENABLED

__all__ = ["thomas", "psor", "policy_lookup", "lcp_residual"]


def _thomas_numpy(lo, di, up, rhs):
    from scipy.linalg import solve_banded

    n = di.size
    band = np.zeros((3, n))
    band[0, 1:] = up[:-1]
    band[1, :] = di
    band[2, :-1] = lo[1:]
    return solve_banded((1, 1), band, rhs)


def _psor_numpy(lo, di, up, rhs, w, omega, tol, max_sweeps):
    n = di.size
    even = np.arange(0, n, 2)
    odd = np.arange(1, n, 2)
    lo_p = lo.copy()
    up_p = up.copy()
    lo_p[0] = 0.0
    up_p[-1] = 0.0
    for sweep in range(max_sweeps):
        diff = 0.0
        for idx in (even, odd):
            wpad = np.concatenate(([0.0], w, [0.0]))
            s = rhs[idx] - lo_p[idx] * wpad[idx] - up_p[idx] * wpad[idx + 2]
            new = np.maximum(0.0, w[idx] + omega * (s / di[idx] - w[idx]))
            diff = max(diff, float(np.max(np.abs(new - w[idx]))) if idx.size else 0.0)
            w[idx] = new
        if diff <= tol:
            return sweep + 1, True
    return max_sweeps, False


def _policy_lookup_numpy(x, k_idx, wh, x_rows, val_rows):
    n_tables = val_rows.shape[0]
    out = np.zeros((n_tables, x.size))
    for side, weight in ((0, 1.0 - wh), (1, wh)):
        kk = k_idx + side
        for k in np.unique(kk):
            sel = kk == k
            for t in range(n_tables):
                out[t, sel] += weight[sel] * np.interp(x[sel], x_rows[k], val_rows[t, k])
    return out


if NUMBA_ENABLED:
    from numba import njit

    @njit(cache=True, nogil=True)
    def _thomas_numba(lo, di, up, rhs):  # pragma: no cover - exercised via dispatch
        n = di.size
        cp = np.empty(n)
        dp = np.empty(n)
        cp[0] = up[0] / di[0]
        dp[0] = rhs[0] / di[0]
        for i in range(1, n):
            m = di[i] - lo[i] * cp[i - 1]
            cp[i] = up[i] / m
            dp[i] = (rhs[i] - lo[i] * dp[i - 1]) / m
        x = np.empty(n)
        x[n - 1] = dp[n - 1]
        for i in range(n - 2, -1, -1):
            x[i] = dp[i] - cp[i] * x[i + 1]
        return x

    @njit(cache=True, nogil=True)
    def _psor_numba(lo, di, up, rhs, w, omega, tol, max_sweeps):  # pragma: no cover
        n = di.size
        for sweep in range(max_sweeps):
            diff = 0.0
            for i in range(n):
                s = rhs[i]
                if i > 0:
                    s -= lo[i] * w[i - 1]
                if i < n - 1:
                    s -= up[i] * w[i + 1]
                wi = w[i] + omega * (s / di[i] - w[i])
                if wi < 0.0:
                    wi = 0.0
                d = abs(wi - w[i])
                if d > diff:
                    diff = d
                w[i] = wi
            if diff <= tol:
                return sweep + 1, True
        return max_sweeps, False

    @njit(cache=True, nogil=True)
    def _policy_lookup_numba(x, k_idx, wh, x_rows, val_rows):  # pragma: no cover
        n_tables = val_rows.shape[0]
        nm = x_rows.shape[1]
        out = np.zeros((n_tables, x.size))
        for p in range(x.size):
            xp = x[p]
            for side in range(2):
                kk = k_idx[p] + side
                weight = wh[p] if side == 1 else 1.0 - wh[p]
                row = x_rows[kk]
                if xp <= row[0]:
                    i, frac = 0, 0.0
                elif xp >= row[nm - 1]:
                    i, frac = nm - 2, 1.0
                else:
                    lo, hi = 0, nm - 1
                    while hi - lo > 1:
                        mid = (lo + hi) // 2
                        if row[mid] <= xp:
                            lo = mid
                        else:
                            hi = mid
                    i = lo
                    frac = (xp - row[i]) / (row[i + 1] - row[i])
                for t in range(n_tables):
                    out[t, p] += weight * (
                        (1.0 - frac) * val_rows[t, kk, i] + frac * val_rows[t, kk, i + 1]
                    )
        return out

    thomas = _thomas_numba
    psor = _psor_numba
    policy_lookup = _policy_lookup_numba
else:
    thomas = _thomas_numpy
    psor = _psor_numpy
    policy_lookup = _policy_lookup_numpy


def lcp_residual(lo, di, up, rhs, w):
    """max-norm of min(A w - rhs, w), the discrete complementarity residual."""
    aw = di * w
    aw[1:] += lo[1:] * w[:-1]
    aw[:-1] += up[:-1] * w[1:]
    return float(np.max(np.abs(np.minimum(aw - rhs, w))))
