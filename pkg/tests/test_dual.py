"""Dual-surface assembly: convexity, far-field slopes, residuals, cap checks."""

import numpy as np

from habitdual import pde_residuals, slope_asymptote_check, solve_unconstrained


def test_top_slice_equals_capped_solution(smoke_pipeline):
    surface = smoke_pipeline["surface"]
    np.testing.assert_allclose(surface.u[-1], surface.phi, atol=1e-12)


def test_surface_monotone_in_habit(smoke_pipeline):
    # u_h = -w <= 0: a higher habit floor can only hurt the dual value
    surface = smoke_pipeline["surface"]
    assert float(np.diff(surface.u, axis=0).max()) <= 1e-10


def test_convexity_margin(smoke_pipeline):
    assert smoke_pipeline["surface"].convexity_margin() >= -1e-7


def test_slope_asymptotes(smoke_pipeline):
    report = slope_asymptote_check(smoke_pipeline["surface"])
    assert report["max_right_edge_error"] < 5e-2  # coarse smoke grid
    assert report["left_edge_diverges"]


def test_pde_residuals_small_in_continuation(smoke_pipeline):
    report = pde_residuals(smoke_pipeline["surface"])
    assert report["continuation_rel_residual"] < 5e-2  # coarse smoke grid


def test_unconstrained_dominates_constrained(params, kernel, smoke_pipeline):
    surface = smoke_pipeline["surface"]
    u_bar = solve_unconstrained(params, kernel, smoke_pipeline["grid"])
    # constrained never exceeds unconstrained, up to habit-quadrature error
    # (10 coarse slices here; the Delta-h^3 floor shrinks with slice count)
    assert float((surface.u - u_bar[None]).max()) < 1e-2


def test_v_y_negative_and_monotone(smoke_pipeline):
    v_y = smoke_pipeline["surface"].v_y
    assert float(v_y.max()) < 0.0
    # x = -v_y decreases in z on every row
    assert float(np.diff(-v_y, axis=2).max()) < 0.0
