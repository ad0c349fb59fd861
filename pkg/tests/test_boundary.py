"""Free-boundary extraction and habit inversion."""

import numpy as np
import pytest

from habitdual import (
    BoundaryCurve,
    DataError,
    extract_boundary,
    invert_boundary,
)


def test_boundary_below_marginal_utility(smoke_pipeline, kernel):
    grid = smoke_pipeline["grid"]
    for curve in smoke_pipeline["curves"]:
        bound = float(np.log(kernel.u.marginal(curve.h)))
        assert float(curve.z_star[1:].max()) <= bound + grid.dz + 1e-9


def test_boundary_monotone(smoke_pipeline):
    grid = smoke_pipeline["grid"]
    for curve in smoke_pipeline["curves"]:
        assert float(np.diff(curve.z_star[1:]).max()) <= grid.dz + 1e-12
    zs = np.stack([c.z_star for c in smoke_pipeline["curves"]])
    assert float(np.diff(zs[:, 1:], axis=0).max()) <= grid.dz + 1e-12


def test_boundary_first_step_close_to_marginal_utility(smoke_pipeline, kernel):
    grid = smoke_pipeline["grid"]
    for curve in smoke_pipeline["curves"]:
        bound = float(np.log(kernel.u.marginal(curve.h)))
        assert abs(curve.z_star[1] - bound) <= 2 * grid.dz


def test_inversion_roundtrip(smoke_pipeline):
    inv = invert_boundary(smoke_pipeline["curves"])
    grid = smoke_pipeline["grid"]
    tau = grid.tau_max
    for curve in smoke_pipeline["curves"][2:-2]:
        h_back = inv.at(curve.at(tau), tau)
        assert abs(h_back - curve.h) <= curve.h * 0.25  # one habit cell on the geometric grid


def test_inversion_zero_right_of_smallest_habit(smoke_pipeline):
    inv = invert_boundary(smoke_pipeline["curves"])
    assert inv.at(inv.z_nodes[-1], smoke_pipeline["grid"].tau_max) == 0.0


def test_inversion_rejects_crossing_curves(smoke_pipeline):
    curves = smoke_pipeline["curves"]
    bad = BoundaryCurve(
        h=curves[0].h * 0.5,
        tau_nodes=curves[0].tau_nodes,
        z_star=curves[-1].z_star - 1.0,  # far below the larger-habit curves: crossing
        z_nodes=curves[0].z_nodes,
        exited_left=np.zeros_like(curves[0].exited_left),
        degenerate=np.zeros_like(curves[0].degenerate),
    )
    with pytest.raises(DataError):
        invert_boundary([bad] + curves)


def test_extraction_requires_monotone_solution(smoke_pipeline, params):
    import copy

    sol = copy.deepcopy(smoke_pipeline["sols"][0])
    sol.w[5, 60] = sol.w[5, 100] + 1.0  # break z-monotonicity
    with pytest.raises(DataError):
        extract_boundary(sol)
