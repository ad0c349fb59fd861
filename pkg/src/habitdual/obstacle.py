"""Per-habit-slice parabolic obstacle problem on a truncated log-price grid.

The unknown w(z, tau; h) satisfies min{w_tau - T w + f(z,h), w} = 0 with zero
initial data, where T u = (kappa^2/2) u_zz + (rho - r - kappa^2/2) u_z - rho u.
Two independent schemes are provided: a penalized implicit scheme solved by
semismooth Newton, and a projected-SOR linear complementarity scheme used as
cross-oracle.  Both use backward Euler in time and Dirichlet conditions:
w = 0 at z_min (deep contact) and the exact floor-region asymptote
w = (b/r)(1 - e^{-r tau}) e^z - (b U'(bh)/rho)(1 - e^{-rho tau}) at z_max,
which the operator preserves exactly on affine-exponential profiles.

Each solution carries the complementarity multiplier lam ~ w_tau - T w + f
alongside w; the contact set is where w is pinned at zero by a positive
multiplier, which is the robust way to locate the free boundary (w itself
decays below any fixed threshold well inside the continuation region when
the diffusion is weak).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import PreconditionError, SchemeError
from .params import MarketParams
from .utility import UtilityKernel

#: absolute tolerance for sign/monotonicity checks on desk-scale grids:
#: below scheme truncation error, above round-off.
DEFAULT_CHECK_TOL = 1e-7

#: recommended clearance between the analytic active band and the box edges.
RECOMMENDED_MARGIN = 5.0


@dataclass(frozen=True)
class Grid1D:
    """Uniform tensor grid in log-marginal-utility z and backward time tau."""

    z_min: float
    z_max: float
    nz: int
    n_tau: int
    tau_max: float

    def __post_init__(self):
        if self.nz < 3:
            raise PreconditionError(f"nz must be >= 3, got {self.nz}")
        if self.z_min >= self.z_max:
            raise PreconditionError("z_min must be below z_max")
        if self.n_tau < 1 or self.tau_max <= 0:
            raise PreconditionError("need n_tau >= 1 and tau_max > 0")

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / (self.nz - 1)

    @property
    def d_tau(self) -> float:
        return self.tau_max / self.n_tau

    @property
    def z_nodes(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, self.nz)

    @property
    def tau_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.tau_max, self.n_tau + 1)

    def check_habit_coverage(self, kernel: UtilityKernel, h: float, hard_margin: float = 1.0):
        """Require the active band [ln U'(h), ln U'(bh)] inside the box.

        The right edge must clear ln U'(bh) for the floor-region far-field
        condition to be valid.  Full clearance of RECOMMENDED_MARGIN keeps
        boundary pollution negligible; falling short of it only warns, because
        the reference desk grid intentionally trades clearance for runtime.
        """
        zh = float(np.log(kernel.u.marginal(h)))
        zbh = float(np.log(kernel.u.marginal(kernel.b * h)))
        if zh - hard_margin <= self.z_min or zbh + hard_margin >= self.z_max:
            raise PreconditionError(
                f"grid too narrow for habit slice h={h}: active band "
                f"[{zh:.3f}, {zbh:.3f}] not inside ({self.z_min}, {self.z_max}) "
                f"with margin {hard_margin}"
            )
        if zh - RECOMMENDED_MARGIN <= self.z_min or zbh + RECOMMENDED_MARGIN >= self.z_max:
            warnings.warn(
                f"truncation clearance below {RECOMMENDED_MARGIN} for h={h}",
                stacklevel=2,
            )


@dataclass(frozen=True)
class PenaltyParams:
    """Penalty scale and the nonlinear-solve controls for the penalized scheme."""

    epsilon: float = 1e-6
    newton_tol: float = 1e-10
    newton_max_iter: int = 50

    def __post_init__(self):
        if self.epsilon <= 0:
            raise PreconditionError("epsilon must be > 0")
        if self.newton_tol <= 0 or self.newton_max_iter < 1:
            raise PreconditionError("invalid Newton controls")


def penalty_terms(w, epsilon, u_prime_h):
    """Penalty beta_eps(w) and its derivative.

    beta(x) = -U'(h) * s^3 with s = max(0, (eps - x)/eps): C^2, equals -U'(h)
    at 0, vanishes for x >= eps, nondecreasing and concave, and diverges for
    x < 0 as eps -> 0.
    """
    s = np.maximum(0.0, (epsilon - w) / epsilon)
    beta = -u_prime_h * s**3
    dbeta = 3.0 * u_prime_h * s**2 / epsilon
    return beta, dbeta


@dataclass
class ObstacleSolution:
    """Discrete w over (tau, z) for one habit slice.

    ``w[j, i]`` is the value at tau_nodes[j], z_nodes[i]; w[0] is the zero
    initial data.  ``lam`` is the complementarity multiplier (the amount by
    which the marching equation exceeds equality); it is positive on the
    contact set and zero in continuation, and drives boundary extraction.
    """

    h: float
    w: np.ndarray
    lam: np.ndarray
    scheme_tag: str
    grid: Grid1D
    sweeps: int = 0

    def check_estimates(self, params: MarketParams, tol: float = DEFAULT_CHECK_TOL):
        """Raise if the sign/growth/monotonicity estimates fail beyond tol."""
        z = self.grid.z_nodes
        if float(self.w.min()) < -tol:
            raise SchemeError(f"w dips below 0 by {-self.w.min():.3e}")
        excess = float((self.w - np.exp(z)[None, :] / params.r).max())
        pad = self.scheme_tag_epsilon()
        if excess > pad + tol:
            raise SchemeError(f"w exceeds e^z/r bound by {excess:.3e}")
        if float(np.diff(self.w, axis=1).min()) < -tol:
            raise SchemeError("w not monotone in z")
        if float(np.diff(self.w, axis=0).min()) < -tol:
            raise SchemeError("w not monotone in tau")

    def scheme_tag_epsilon(self) -> float:
        # the penalized solution is allowed to overshoot the bound by epsilon
        if self.scheme_tag.startswith("penalty"):
            return float(self.scheme_tag.split(":", 1)[1])
        return 0.0


def _implicit_bands(params: MarketParams, grid: Grid1D):
    """Bands (lo, di, up) of A = I - d_tau * T_d with Dirichlet end rows.

    Interior rows use central differences; the drift switches to one-sided
    upwinding only when the central stencil would lose the M-matrix property.
    Rows 0 and nz-1 are identity rows; the right-hand side supplies the
    boundary values.
    """
    nz, dz, dt = grid.nz, grid.dz, grid.d_tau
    half_k2 = 0.5 * params.kappa**2
    a = half_k2 / dz**2
    drift = params.rho - params.r - half_k2
    d = drift / (2.0 * dz)
    lo = np.empty(nz)
    di = np.empty(nz)
    up = np.empty(nz)
    if abs(d) <= a:
        lo[:] = -dt * (a - d)
        up[:] = -dt * (a + d)
        di[:] = 1.0 + dt * (2.0 * a + params.rho)
    else:
        dd = drift / dz
        if drift >= 0:
            lo[:] = -dt * a
            up[:] = -dt * (a + dd)
            di[:] = 1.0 + dt * (2.0 * a + dd + params.rho)
        else:
            lo[:] = -dt * (a - dd)
            up[:] = -dt * a
            di[:] = 1.0 + dt * (2.0 * a - dd + params.rho)
    lo[0], di[0], up[0] = 0.0, 1.0, 0.0
    lo[-1], di[-1], up[-1] = 0.0, 1.0, 0.0
    return lo, di, up


def affine_farfield_coefficients(
    params: MarketParams, grid: Grid1D, const_source: float, exp_source: float
):
    """Implicit-Euler evolution of far-field coefficients A(tau) + B(tau) e^z.

    Solves A' = const_source - rho A and B' = exp_source + m1 B with zero
    initial data, where m1 is the eigenvalue of the interior z-stencil on e^z
    (m1 -> -r as dz -> 0).  Using the scheme's own eigenvalue and time
    stepping makes the returned coefficients agree with the interior discrete
    profile to roundoff, so Dirichlet values built from them leave no
    boundary layer and telescope exactly across habit slices.
    """
    dz, dt = grid.dz, grid.d_tau
    half_k2 = 0.5 * params.kappa**2
    drift = params.rho - params.r - half_k2
    E = np.exp(dz)
    m1 = half_k2 * (E - 2.0 + 1.0 / E) / dz**2 + drift * (E - 1.0 / E) / (2.0 * dz) - params.rho
    n = grid.n_tau + 1
    a_t = np.zeros(n)
    b_t = np.zeros(n)
    for j in range(1, n):
        a_t[j] = (a_t[j - 1] + dt * const_source) / (1.0 + dt * params.rho)
        b_t[j] = (b_t[j - 1] + dt * exp_source) / (1.0 - dt * m1)
    return a_t, b_t


def _right_boundary_values(params: MarketParams, kernel: UtilityKernel, grid: Grid1D, h: float):
    """Scheme-exact floor-region asymptote of w at z_max for each tau node.

    Where the consumption floor binds, w = alpha(tau) e^z + beta(tau) with
    alpha' = b - r alpha and beta' = -b U'(bh) - rho beta (zero initial
    data); the coefficients follow the discrete recursions of the interior
    scheme so the boundary values telescope exactly against the capped solve.
    """
    beta, alpha = affine_farfield_coefficients(
        params, grid, -params.b * float(kernel.u.marginal(kernel.b * h)), params.b
    )
    return np.maximum(alpha * np.exp(grid.z_max) + beta, 0.0)


def _multiplier(lo, di, up, w, rhs, dt):
    """(A w - rhs)/dt: the discrete excess of the marching equation."""
    aw = di * w
    aw[1:] += lo[1:] * w[:-1]
    aw[:-1] += up[:-1] * w[1:]
    lam = (aw - rhs) / dt
    lam[0] = lam[-1] = 0.0
    return lam


def discrete_T_operator(w_slice, params: MarketParams, grid: Grid1D):
    """Apply T u = (kappa^2/2) u_zz + (rho - r - kappa^2/2) u_z - rho u.

    Central differences inside, one-sided first/second differences at the two
    end nodes.
    """
    w_slice = np.asarray(w_slice, dtype=float)
    if w_slice.shape != (grid.nz,):
        raise PreconditionError(f"slice length {w_slice.shape} != grid nz {grid.nz}")
    dz = grid.dz
    half_k2 = 0.5 * params.kappa**2
    drift = params.rho - params.r - half_k2
    uz = np.empty_like(w_slice)
    uzz = np.empty_like(w_slice)
    uz[1:-1] = (w_slice[2:] - w_slice[:-2]) / (2.0 * dz)
    uzz[1:-1] = (w_slice[2:] - 2.0 * w_slice[1:-1] + w_slice[:-2]) / dz**2
    uz[0] = (w_slice[1] - w_slice[0]) / dz
    uz[-1] = (w_slice[-1] - w_slice[-2]) / dz
    uzz[0] = (w_slice[2] - 2.0 * w_slice[1] + w_slice[0]) / dz**2
    uzz[-1] = (w_slice[-1] - 2.0 * w_slice[-2] + w_slice[-3]) / dz**2
    return half_k2 * uzz + drift * uz - params.rho * w_slice


def _source(kernel: UtilityKernel, grid: Grid1D, h: float, source_override):
    if source_override is None:
        return kernel.f_source(grid.z_nodes, h)
    if callable(source_override):
        return np.asarray(source_override(grid.z_nodes), dtype=float)
    return np.broadcast_to(np.asarray(source_override, dtype=float), (grid.nz,)).copy()


def solve_complementarity(
    params: MarketParams,
    kernel: UtilityKernel,
    grid: Grid1D,
    h: float,
    omega: float = 1.5,
    tol: float = 1e-10,
    max_sweeps: int = 200_000,
    source_override=None,
) -> ObstacleSolution:
    """Backward-Euler linear complementarity march solved by projected SOR.

    Serves as the independent oracle for the penalized scheme.
    """
    if source_override is None:
        grid.check_habit_coverage(kernel, h)
        w_right = _right_boundary_values(params, kernel, grid, h)
    else:
        # overrides run on a homogeneous box: zero Dirichlet at both ends
        w_right = np.zeros(grid.n_tau + 1)
    f = _source(kernel, grid, h, source_override)
    lo, di, up = _implicit_bands(params, grid)
    dt = grid.d_tau
    w_all = np.zeros((grid.n_tau + 1, grid.nz))
    lam_all = np.zeros_like(w_all)
    lam_all[0] = np.maximum(f, 0.0)
    lam_all[0, 0] = lam_all[0, -1] = 0.0
    w = np.zeros(grid.nz)
    total_sweeps = 0
    for j in range(1, grid.n_tau + 1):
        rhs = w - dt * f
        rhs[0] = 0.0
        rhs[-1] = w_right[j]
        sweeps, converged = _kernels.psor(lo, di, up, rhs, w, omega, tol, max_sweeps)
        total_sweeps += sweeps
        if not converged:
            res = _kernels.lcp_residual(lo, di, up, rhs, w)
            raise SchemeError(
                f"PSOR did not converge at step {j} (h={h})", residual=res
            )
        w_all[j] = w
        lam_all[j] = _multiplier(lo, di, up, w, rhs, dt)
    return ObstacleSolution(
        h=h, w=w_all, lam=lam_all, scheme_tag="complementarity", grid=grid, sweeps=total_sweeps
    )


def solve_penalized(
    params: MarketParams,
    kernel: UtilityKernel,
    grid: Grid1D,
    h: float,
    pen: PenaltyParams,
    source_override=None,
) -> ObstacleSolution:
    """Backward-Euler march of the penalized equation, semismooth Newton per step."""
    if source_override is None:
        grid.check_habit_coverage(kernel, h)
        w_right = _right_boundary_values(params, kernel, grid, h)
    else:
        w_right = np.zeros(grid.n_tau + 1)
    f = _source(kernel, grid, h, source_override)
    lo, di, up = _implicit_bands(params, grid)
    dt = grid.d_tau
    u_prime_h = float(kernel.u.marginal(h))
    w_all = np.zeros((grid.n_tau + 1, grid.nz))
    lam_all = np.zeros_like(w_all)
    lam_all[0] = np.maximum(f, 0.0)
    lam_all[0, 0] = lam_all[0, -1] = 0.0
    w = np.zeros(grid.nz)
    for j in range(1, grid.n_tau + 1):
        w_old = w.copy()
        rhs = w_old - dt * f
        rhs[0] = 0.0
        rhs[-1] = w_right[j]
        residual = np.inf
        for _ in range(pen.newton_max_iter):
            beta, dbeta = penalty_terms(w, pen.epsilon, u_prime_h)
            beta[0] = dbeta[0] = 0.0  # Dirichlet rows carry no penalty
            beta[-1] = dbeta[-1] = 0.0
            aw = di * w
            aw[1:] += lo[1:] * w[:-1]
            aw[:-1] += up[:-1] * w[1:]
            F = aw + dt * beta - rhs
            residual = float(np.max(np.abs(F)))
            if residual <= pen.newton_tol:
                break
            dj = di + dt * dbeta
            w = w + _kernels.thomas(lo, dj, up, -F)
        else:
            raise SchemeError(
                f"penalty Newton stalled at step {j} (h={h})", residual=residual
            )
        w_all[j] = w
        beta, _ = penalty_terms(w, pen.epsilon, u_prime_h)
        lam_all[j] = -beta
        lam_all[j, 0] = lam_all[j, -1] = 0.0
    return ObstacleSolution(
        h=h, w=w_all, lam=lam_all, scheme_tag=f"penalty:{pen.epsilon}", grid=grid
    )


def sweep_habit_slices(
    params: MarketParams,
    kernel: UtilityKernel,
    grid: Grid1D,
    h_grid,
    scheme: str = "complementarity",
    pen: PenaltyParams | None = None,
    threads: int = 1,
):
    """Independent obstacle solves for each habit level, ordered as h_grid."""
    h_grid = np.asarray(h_grid, dtype=float)
    if h_grid.ndim != 1 or h_grid.size == 0:
        raise PreconditionError("h_grid must be a nonempty 1-d array")
    if np.any(h_grid <= 0) or np.any(np.diff(h_grid) <= 0):
        raise PreconditionError("h_grid must be strictly increasing and positive")

    def solve_one(idx_h):
        idx, h = idx_h
        try:
            if scheme == "complementarity":
                return solve_complementarity(params, kernel, grid, h)
            if scheme == "penalty":
                return solve_penalized(params, kernel, grid, h, pen or PenaltyParams())
            raise PreconditionError(f"unknown scheme {scheme!r}")
        except SchemeError as exc:
            raise SchemeError(f"slice {idx} (h={h}): {exc}", residual=exc.residual) from exc

    items = list(enumerate(h_grid))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(solve_one, items))
    return [solve_one(it) for it in items]
