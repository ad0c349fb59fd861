"""Primal reconstruction: inversion, value, thresholds, policies, bounds."""

import numpy as np
import pytest

from habitdual import (
    CRRAUtility,
    DomainError,
    MarketParams,
    PreconditionError,
    TruncationError,
    UtilityKernel,
    ZeroUtility,
    make_merton_oracle,
    terminal_threshold_limit,
)
from habitdual.primal import MertonOracle


def test_invert_roundtrip(smoke_pipeline):
    policy = smoke_pipeline["policy"]
    surface = smoke_pipeline["surface"]
    h = float(surface.h_grid[5])  # on-grid habit so the slice row is exact
    k = surface.h_index(h)
    from scipy.interpolate import PchipInterpolator

    vy = PchipInterpolator(surface.z_nodes, surface.v_y[k, -1])
    for x in (0.5, 1.0, 2.0, 5.0):
        y = policy.invert_dual(x, 0.0, h)
        assert abs(-float(vy(np.log(y))) - x) < 1e-9 * (1 + x)


def test_marginal_value_equals_dual_variable(smoke_pipeline):
    policy = smoke_pipeline["policy"]
    x, t, h = 2.0, 0.25, 1.0
    y = policy.invert_dual(x, t, h)
    eps = 1e-5
    v_x = (policy.value_at(x + eps, t, h) - policy.value_at(x - eps, t, h)) / (2 * eps)
    assert abs(v_x - y) < 1e-2 * y  # off-grid (t,h): bilinear-blend interpolation error


def test_value_concave_in_wealth(smoke_pipeline):
    policy = smoke_pipeline["policy"]
    xs = np.linspace(0.6, 6.0, 12)
    vals = np.array([policy.value_at(x, 0.0, 1.0) for x in xs])
    assert np.all(np.diff(vals) > 0)
    assert np.all(np.diff(vals, 2) < 1e-10)
    assert policy.second_derivative(2.0, 0.0, 1.0) < 0


def test_threshold_ordering(smoke_pipeline, h_grid):
    policy = smoke_pipeline["policy"]
    for h in smoke_pipeline["h_grid"][1:-1]:
        for t in (0.0, 0.5, 0.9):
            lo, hi, star = policy.thresholds(t, float(h))
            assert lo < hi <= star


def test_feedback_regions(smoke_pipeline):
    policy = smoke_pipeline["policy"]
    lo, hi, star = policy.thresholds(0.0, 1.0)
    _, c_low, region_low = policy.feedback(0.8 * lo, 0.0, 1.0)
    assert region_low == "LC" and abs(c_low - 0.25) < 1e-12
    _, c_mid, region_mid = policy.feedback(0.5 * (lo + hi), 0.0, 1.0)
    assert region_mid == "MC" and 0.25 < c_mid < 1.0
    _, c_hi, region_hi = policy.feedback(1.5 * star, 0.0, 1.0)
    assert region_hi == "S" and c_hi == 1.0
    pi, _, _ = policy.feedback(2.0, 0.0, 1.0)
    assert pi > 0


def test_floor_queries_rejected(smoke_pipeline, params):
    policy = smoke_pipeline["policy"]
    floor = float(params.wealth_floor(1.0, params.T))
    with pytest.raises(DomainError):
        policy.value_at(0.5 * floor, 0.0, 1.0)


def test_box_exhaustion_raises_truncation(smoke_pipeline):
    policy = smoke_pipeline["policy"]
    with pytest.raises(TruncationError):
        policy.invert_dual(1e9, 0.0, 1.0)


def test_sandwich_bounds(smoke_pipeline):
    policy = smoke_pipeline["policy"]
    for x in (0.5, 1.0, 2.0, 5.0):
        for t in (0.0, 0.5):
            lo, hi = policy.value_bounds(x, t, 1.0)
            v = policy.value_at(x, t, 1.0)
            assert lo <= v <= hi


def test_terminal_threshold_limit_crra_identity(kernel):
    # with matching CRRA running and terminal utilities the limit is h itself
    for h in (0.2, 1.0, 4.0):
        assert abs(terminal_threshold_limit(kernel, h) - h) < 1e-12


def test_merton_oracle_closed_form_consistency(params):
    oracle = MertonOracle(params, gamma=0.5)
    # terminal condition and monotone decay of the time factor
    assert abs(oracle.time_factor(params.T) - 1.0) < 1e-10
    assert oracle.time_factor(0.0) > 1.0  # longer horizon is worth more here
    # value scales as x^{1-gamma}
    ratio = oracle.value(4.0, 0.0) / oracle.value(1.0, 0.0)
    assert abs(ratio - 4.0**0.5) < 1e-10


def test_merton_oracle_requires_matching_crra(params):
    mismatched = UtilityKernel(u=CRRAUtility(0.5), u_T=ZeroUtility())
    with pytest.raises(PreconditionError):
        make_merton_oracle(params, mismatched)


def test_hjb_residual_small_in_continuation(smoke_pipeline):
    policy = smoke_pipeline["policy"]
    lo, hi, _ = policy.thresholds(0.5, 1.0)
    x = 0.5 * (lo + hi)
    v = policy.value_at(x, 0.5, 1.0)
    assert abs(policy.hjb_residual(x, 0.5, 1.0)) < 5e-2 * (1 + abs(v))  # coarse grid
