"""Shared fixtures: the reference desk-scale pipeline, built once per session."""

import numpy as np
import pytest

from habitdual import (
    CRRAUtility,
    Grid1D,
    MarketParams,
    PolicyTables,
    PrimalPolicy,
    UtilityKernel,
    extract_boundary,
    integrate_over_habit,
    solve_capped_linear,
    solve_unconstrained,
    sweep_habit_slices,
)

DESK = dict(z_min=-8.0, z_max=6.0, nz=561, n_tau=200)
H_MIN, H_MAX, H_COUNT = 0.05, 8.0, 40


@pytest.fixture(scope="session")
def params():
    return MarketParams(r=0.05, mu=0.1, sigma=0.3, rho=0.1, b=0.25, T=1.0)


@pytest.fixture(scope="session")
def kernel():
    crra = CRRAUtility(0.5)
    return UtilityKernel(u=crra, u_T=crra, b=0.25)


@pytest.fixture(scope="session")
def desk_grid(params):
    return Grid1D(tau_max=params.T, **DESK)


@pytest.fixture(scope="session")
def h_grid():
    return np.geomspace(H_MIN, H_MAX, H_COUNT)


@pytest.fixture(scope="session")
def desk_sols(params, kernel, desk_grid, h_grid):
    return sweep_habit_slices(params, kernel, desk_grid, h_grid)


@pytest.fixture(scope="session")
def desk_curves(desk_sols):
    return [extract_boundary(s) for s in desk_sols]


@pytest.fixture(scope="session")
def desk_surface(params, kernel, desk_grid, desk_sols):
    phi = solve_capped_linear(params, kernel, desk_grid, H_MAX)
    return integrate_over_habit(phi, desk_sols, params, kernel)


@pytest.fixture(scope="session")
def desk_unconstrained(params, kernel, desk_grid):
    return solve_unconstrained(params, kernel, desk_grid)


@pytest.fixture(scope="session")
def desk_policy(desk_surface, desk_curves):
    return PrimalPolicy(surface=desk_surface, curves=desk_curves)


@pytest.fixture(scope="session")
def desk_tables(desk_policy):
    return PolicyTables(desk_policy)


@pytest.fixture(scope="session")
def smoke_pipeline(params, kernel):
    """Small, fast pipeline for unit tests that need a full stack."""
    grid = Grid1D(z_min=-8.0, z_max=6.0, nz=141, n_tau=50, tau_max=params.T)
    h = np.geomspace(H_MIN, H_MAX, 10)
    sols = sweep_habit_slices(params, kernel, grid, h)
    curves = [extract_boundary(s) for s in sols]
    phi = solve_capped_linear(params, kernel, grid, H_MAX)
    surface = integrate_over_habit(phi, sols, params, kernel)
    policy = PrimalPolicy(surface=surface, curves=curves)
    return dict(grid=grid, h_grid=h, sols=sols, curves=curves, surface=surface, policy=policy)
