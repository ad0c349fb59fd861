"""Numerical kernels: both backends must agree with reference oracles."""

import numpy as np
import pytest
from scipy.linalg import solve_banded

from habitdual import _kernels
from habitdual._backend import NUMBA_ENABLED


def _random_system(n, seed):
    rng = np.random.default_rng(seed)
    lo = -rng.uniform(0.1, 0.4, n)
    up = -rng.uniform(0.1, 0.4, n)
    di = 1.0 + np.abs(lo) + np.abs(up) + rng.uniform(0, 0.5, n)
    lo[0] = up[-1] = 0.0
    rhs = rng.standard_normal(n)
    return lo, di, up, rhs


def _dense(lo, di, up):
    n = di.size
    a = np.diag(di)
    a += np.diag(lo[1:], -1)
    a += np.diag(up[:-1], 1)
    return a


IMPLS = [("numpy", False)] + ([("numba", True)] if NUMBA_ENABLED else [])


@pytest.mark.parametrize("name,use_numba", IMPLS)
def test_thomas_matches_banded_solver(name, use_numba):
    lo, di, up, rhs = _random_system(201, 3)
    fn = _kernels._thomas_numba if use_numba else _kernels._thomas_numpy
    band = np.zeros((3, di.size))
    band[0, 1:] = up[:-1]
    band[1] = di
    band[2, :-1] = lo[1:]
    expected = solve_banded((1, 1), band, rhs)
    np.testing.assert_allclose(fn(lo, di, up, rhs), expected, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("name,use_numba", IMPLS)
def test_psor_solves_complementarity(name, use_numba):
    lo, di, up, rhs = _random_system(151, 5)
    fn = _kernels._psor_numba if use_numba else _kernels._psor_numpy
    w = np.zeros(di.size)
    sweeps, converged = fn(lo, di, up, rhs, w, 1.6, 1e-12, 20000)
    assert converged
    assert _kernels.lcp_residual(lo, di, up, rhs, w) < 1e-9
    assert w.min() >= 0.0


@pytest.mark.skipif(not NUMBA_ENABLED, reason="numba backend unavailable")
def test_psor_backends_agree():
    lo, di, up, rhs = _random_system(151, 7)
    w_a = np.zeros(di.size)
    w_b = np.zeros(di.size)
    _kernels._psor_numpy(lo, di, up, rhs, w_a, 1.5, 1e-13, 50000)
    _kernels._psor_numba(lo, di, up, rhs, w_b, 1.5, 1e-13, 50000)
    np.testing.assert_allclose(w_a, w_b, atol=1e-10)


@pytest.mark.skipif(not NUMBA_ENABLED, reason="numba backend unavailable")
def test_policy_lookup_backends_agree():
    rng = np.random.default_rng(11)
    n_h, nm, n = 7, 31, 500
    x_rows = np.cumsum(rng.uniform(0.05, 0.2, (n_h, nm)), axis=1)
    val_rows = rng.standard_normal((3, n_h, nm))
    x = rng.uniform(-1.0, x_rows.max() + 1.0, n)  # includes out-of-range clamps
    k_idx = rng.integers(0, n_h - 1, n)
    wh = rng.uniform(0, 1, n)
    a = _kernels._policy_lookup_numpy(x, k_idx, wh, x_rows, val_rows)
    b = _kernels._policy_lookup_numba(x, k_idx, wh, x_rows, val_rows)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_policy_lookup_exact_on_nodes():
    x_rows = np.array([[0.0, 1.0, 2.0], [0.0, 2.0, 4.0]])
    val_rows = np.array([[[10.0, 11.0, 12.0], [20.0, 22.0, 24.0]]])
    x = np.array([1.0, 2.0])
    k_idx = np.array([0, 0], dtype=np.int64)
    wh = np.array([0.0, 1.0])
    out = _kernels.policy_lookup(x, k_idx, wh, x_rows, val_rows)
    assert out[0, 0] == 11.0   # node of the lower habit row
    assert out[0, 1] == 22.0   # node of the upper habit row


def test_backend_flag_reports_a_backend():
    from habitdual import backend_name

    assert backend_name() in ("numba", "numpy")
