"""Primal reconstruction from the dual surface.

All primal quantities -- value V(x,t,h), marginal value I = V_x, wealth
thresholds x_L < x_H <= x_star, and the feedback policies pi*, c* -- are
computed on demand by inverting the Legendre transform on the stored dual
surface; there is no separate primal PDE solve.  Interpolation is monotone
cubic in z (preserving the strict monotonicity of v_y that the inversion
relies on) and linear in tau and h.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .boundary import BoundaryCurve
from .dual import DualSurface
from .errors import (
    DataError,
    DomainError,
    PreconditionError,
    TruncationError,
)
from .params import MarketParams

#: region labels: low consumption (floor), middle (interior), high (at habit),
#: switching (habit about to ratchet)
REGIONS = ("LC", "MC", "HC", "S")


def _bracket(nodes, value, name):
    """(index, weight) for linear interpolation; value must lie inside nodes."""
    lo, hi = float(nodes[0]), float(nodes[-1])
    eps = 1e-12 * max(1.0, abs(hi))
    if value < lo - eps or value > hi + eps:
        raise PreconditionError(f"{name}={value} outside [{lo}, {hi}]")
    value = min(max(value, lo), hi)
    j = int(np.clip(np.searchsorted(nodes, value) - 1, 0, nodes.size - 2))
    wt = (value - nodes[j]) / (nodes[j + 1] - nodes[j])
    return j, float(np.clip(wt, 0.0, 1.0))


@dataclass
class PrimalPolicy:
    """On-demand primal evaluations over a dual surface and its boundary curves.

    ``curves`` must align one-to-one with the surface habit slices.  All
    operations are read-only over the arrays and reentrant.
    """

    surface: DualSurface
    curves: list[BoundaryCurve]
    residual_tol: float = 1e-10
    _z_star: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s = self.surface
        if len(self.curves) != s.h_grid.size:
            raise PreconditionError("need one boundary curve per surface habit slice")
        for c, h in zip(self.curves, s.h_grid):
            if abs(c.h - h) > 1e-9 * max(1.0, h):
                raise PreconditionError("boundary curves out of order with surface slices")
        self._z_star = np.stack([c.z_star for c in self.curves])  # (h, tau)

    # -- interpolation plumbing ----------------------------------------------

    @property
    def params(self) -> MarketParams:
        return self.surface.params

    def _tau(self, t: float) -> float:
        T = self.params.T
        tau = T - t
        if tau < -1e-12 or tau > self.surface.grid.tau_max + 1e-12:
            raise PreconditionError(f"t={t} outside the solved horizon")
        return min(max(tau, 0.0), self.surface.grid.tau_max)

    def _weights(self, t: float, h: float):
        tau = self._tau(t)
        j, wt = _bracket(self.surface.tau_nodes, tau, "tau")
        k, wh = _bracket(self.surface.h_grid, h, "h")
        return tau, j, wt, k, wh

    def _blend(self, arr, j, wt, k, wh):
        """Bilinear (tau, h) combination of z-rows of an (h, tau, z) array."""
        top = (1.0 - wt) * arr[k, j] + wt * arr[k, j + 1]
        bot = (1.0 - wt) * arr[k + 1, j] + wt * arr[k + 1, j + 1]
        return (1.0 - wh) * top + wh * bot

    # -- inversion -----------------------------------------------------------

    def invert_dual(self, x: float, t: float, h: float) -> float:
        """Marginal value y = I(x,t,h) with |v_y(y) + x| <= tol*(1+x)."""
        z = self._invert_to_z(x, t, h)
        return float(np.exp(z))

    def _invert_to_z(self, x, t, h):
        tau, j, wt, k, wh = self._weights(t, h)
        floor = float(self.params.wealth_floor(h, tau))
        if x <= floor:
            raise DomainError(
                f"wealth {x} at or below the consumption floor {floor}; no finite marginal value"
            )
        vy = self._blend(self.surface.v_y, j, wt, k, wh)
        z_nodes = self.surface.z_nodes
        # x = -v_y is strictly decreasing in z
        if x > -vy[0]:
            raise TruncationError(f"wealth {x} beyond the left edge of the dual box")
        if x < -vy[-1]:
            raise TruncationError(
                f"wealth {x} between the floor and the right-edge slope {-vy[-1]}; widen the box"
            )
        interp = PchipInterpolator(z_nodes, vy)
        # v_y is increasing in z, so v_y + x changes sign once; bracket on nodes
        i = int(np.clip(np.searchsorted(vy, -x) - 1, 0, z_nodes.size - 2))
        a, b = z_nodes[i], z_nodes[i + 1]
        fa, fb = vy[i] + x, vy[i + 1] + x
        if fa == 0.0:
            return float(a)
        if fb == 0.0:
            return float(b)
        z = brentq(lambda zz: float(interp(zz)) + x, a, b, xtol=1e-14, rtol=8.9e-16)
        if abs(float(interp(z)) + x) > self.residual_tol * (1.0 + abs(x)):
            raise DataError("dual slope inversion did not reach the residual tolerance")
        return float(z)

    def value_at(self, x: float, t: float, h: float) -> float:
        """V(x,t,h) = v(y,tau,h) + x y at the minimizing y."""
        tau, j, wt, k, wh = self._weights(t, h)
        z = self._invert_to_z(x, t, h)
        u_row = self._blend(self.surface.u, j, wt, k, wh)
        u_val = float(PchipInterpolator(self.surface.z_nodes, u_row)(z))
        return u_val + x * float(np.exp(z))

    def second_derivative(self, x: float, t: float, h: float) -> float:
        """V_xx = -1/v_yy(I(x,t,h))."""
        tau, j, wt, k, wh = self._weights(t, h)
        z = self._invert_to_z(x, t, h)
        vyy_row = self._blend(self.surface.v_yy, j, wt, k, wh)
        vyy = float(PchipInterpolator(self.surface.z_nodes, vyy_row)(z))
        if vyy <= 0:
            raise DataError("dual surface not strictly convex at the inversion point")
        return -1.0 / vyy

    # -- thresholds ----------------------------------------------------------

    def thresholds(self, t: float, h: float) -> tuple[float, float, float]:
        """(x_L, x_H, x_star): floor-region, habit-region, and switching wealth.

        x_H = -v_y(U'(h)), x_L = -v_y(U'(bh)) (the floor itself when b = 0),
        x_star = -v_y(e^{z*}).  Ordering x_L <= x_H <= x_star is asserted up
        to one z-cell of slope.
        """
        tau, j, wt, k, wh = self._weights(t, h)
        vy = self._blend(self.surface.v_y, j, wt, k, wh)
        z_nodes = self.surface.z_nodes
        interp = PchipInterpolator(z_nodes, vy)

        def x_at(z):
            z = min(max(z, z_nodes[0]), z_nodes[-1])
            return -float(interp(z))

        kernel = self.surface.kernel
        z_h = float(np.log(kernel.u.marginal(h)))
        x_H = x_at(z_h)
        if self.params.b > 0.0:
            x_L = x_at(float(np.log(kernel.u.marginal(self.params.b * h))))
        else:
            x_L = float(self.params.wealth_floor(h, tau))
        zs = (1.0 - wh) * (
            (1.0 - wt) * self._z_star[k, j] + wt * self._z_star[k, j + 1]
        ) + wh * ((1.0 - wt) * self._z_star[k + 1, j] + wt * self._z_star[k + 1, j + 1])
        x_star = x_at(zs)
        cell = abs(x_at(z_h - self.surface.grid.dz) - x_H)
        if x_L > x_H + cell or x_H > x_star + cell:
            raise DataError(
                f"threshold ordering violated beyond one cell at t={t}, h={h}: "
                f"x_L={x_L}, x_H={x_H}, x_star={x_star}"
            )
        # x_star >= x_H analytically (the stopping boundary sits at or left of
        # the habit-marginal line); resolve sub-cell discretization ties that way
        x_star = max(x_star, x_H)
        return x_L, x_H, x_star

    # -- feedback policies ----------------------------------------------------

    def feedback(self, x: float, t: float, h: float) -> tuple[float, float, str]:
        """(pi_star, c_star, region) at a single state.

        pi* = (kappa/sigma) y v_yy(y); c* follows the three-branch marginal
        comparison; the region label comes from x against the thresholds.
        """
        tau, j, wt, k, wh = self._weights(t, h)
        z = self._invert_to_z(x, t, h)
        y = float(np.exp(z))
        conv_row = self._blend(self.surface.u_zz - self.surface.u_z, j, wt, k, wh)
        conv = float(PchipInterpolator(self.surface.z_nodes, conv_row)(z))
        p = self.params
        pi = (p.kappa / p.sigma) * float(np.exp(-z)) * conv
        c = float(self.surface.kernel.consumption(y, h))
        x_L, x_H, x_star = self.thresholds(t, h)
        if x >= x_star:
            region = "S"
        elif x >= x_H:
            region = "HC"
        elif x > x_L:
            region = "MC"
        else:
            region = "LC"
        return pi, c, region

    def hjb_residual(self, x: float, t: float, h: float) -> float:
        """Residual of the primal dynamic-programming equation at one state.

        -V_t + (kappa^2/2) V_x^2 / V_xx - hat_U(V_x, h) - r x V_x + rho V,
        evaluated through the dual identities (V_t = -u_tau at the inversion
        point); zero in the continuation region up to scheme truncation.
        """
        tau, j, wt, k, wh = self._weights(t, h)
        z = self._invert_to_z(x, t, h)
        y = float(np.exp(z))
        zn = self.surface.z_nodes
        u_row = self._blend(self.surface.u, j, wt, k, wh)
        utau_row = self._blend(self.surface.u_tau, j, wt, k, wh)
        conv_row = self._blend(self.surface.u_zz - self.surface.u_z, j, wt, k, wh)
        v = float(PchipInterpolator(zn, u_row)(z))
        v_t = -float(PchipInterpolator(zn, utau_row)(z))
        vyy = float(np.exp(-2.0 * z)) * float(PchipInterpolator(zn, conv_row)(z))
        V = v + x * y
        p = self.params
        hat = float(self.surface.kernel.hat_u(y, h))
        return (
            -v_t
            + 0.5 * p.kappa**2 * y**2 * (-vyy)
            - hat
            - p.r * x * y
            + p.rho * V
        )

    # -- sandwich bounds -------------------------------------------------------

    def value_bounds(self, x: float, t: float, h: float) -> tuple[float, float]:
        """(lower, upper) envelopes of V from the utility growth constants.

        Lower: the explicit subsolution built from the theta-power minorant of
        the running utility.  Upper: the Legendre image of the exponential-
        in-tau power majorant of both transforms, minimized in closed form.
        """
        p = self.params
        ker = self.surface.kernel
        K, gamma, theta = ker.K, ker.gamma, ker.theta
        tau = self._tau(t)
        floor = float(p.wealth_floor(h, tau))
        if x <= floor:
            raise DomainError("wealth at or below the floor has no finite bounds")
        lam_low = (
            -0.5 * p.kappa**2 * (theta - 1.0) / theta**2
            + (p.rho - p.r) * (theta - 1.0) / theta
            - p.rho
        )
        if p.b > 0.0:
            u_floor = float(ker.u.value(p.b * h))
        else:
            u_floor = float(ker.u.value_at_zero)
        lower = (
            K / (1.0 - theta) * np.exp(lam_low * theta * tau) * (x - floor) ** (1.0 - theta)
            + u_floor / p.rho * -np.expm1(-p.rho * tau)
            - K * np.exp(-p.rho * tau)
        )
        q = (1.0 - gamma) / gamma
        m_p = 0.5 * p.kappa**2 * q * (q + 1.0) + (p.rho - p.r) * (-q) - p.rho
        lam_up = max(0.0, 1.0 - p.rho, 1.0 + m_p)
        e = np.exp(lam_up * tau)
        y_opt = K * (x / e) ** (-gamma)
        upper = e * K * (1.0 + gamma / (1.0 - gamma) * (y_opt / K) ** (-q)) + y_opt * x
        return float(lower), float(upper)


def terminal_threshold_limit(kernel, h: float) -> float:
    """x_H(T-, h) = (U_T')^{-1}(U'(h)): where terminal marginal meets habit marginal."""
    return float(kernel.u_T.marginal_inverse(float(kernel.u.marginal(h))))


class MertonOracle:
    """Closed-form finite-horizon value of the unconstrained constant-coefficient model.

    For CRRA utility with relative risk aversion ``gamma`` on both running and
    terminal utility, V(x,t) = A(t) x^{1-gamma}/(1-gamma) where the time
    factor solves the scalar ODE A' = (rho - (1-gamma)(r + kappa^2/(2 gamma))) A
    - gamma A^{1-1/gamma}, A(T) = 1, integrated to high accuracy.
    """

    def __init__(self, params: MarketParams, gamma: float, rtol: float = 1e-12):
        from scipy.integrate import solve_ivp

        if gamma <= 0 or gamma == 1.0:
            raise PreconditionError("the closed-form reference needs gamma > 0, gamma != 1")
        self.params = params
        self.gamma = gamma
        g = gamma
        rate = params.rho - (1.0 - g) * (params.r + params.kappa**2 / (2.0 * g))

        def rhs(t, A):
            return [rate * A[0] - g * A[0] ** (1.0 - 1.0 / g)]

        sol = solve_ivp(
            rhs, [params.T, 0.0], [1.0], rtol=rtol, atol=1e-14, dense_output=True
        )
        if not sol.success:
            raise DataError(f"time-factor ODE integration failed: {sol.message}")
        self._factor = sol.sol

    def time_factor(self, t: float) -> float:
        if t < 0 or t > self.params.T:
            raise PreconditionError(f"t={t} outside [0, {self.params.T}]")
        return float(self._factor(t)[0])

    def value(self, x: float, t: float) -> float:
        g = self.gamma
        return self.time_factor(t) * x ** (1.0 - g) / (1.0 - g)

    def dual_value(self, z: float, tau: float) -> float:
        """Legendre transform of the value: u(z,tau) = g/(1-g) A^{1/g} e^{-z(1-g)/g}."""
        g = self.gamma
        A = self.time_factor(self.params.T - tau)
        return g / (1.0 - g) * A ** (1.0 / g) * float(np.exp(-z * (1.0 - g) / g))

    def consumption_fraction(self, t: float) -> float:
        """Optimal consumption per unit wealth, A(t)^{-1/gamma}."""
        return self.time_factor(t) ** (-1.0 / self.gamma)


def make_merton_oracle(params: MarketParams, kernel) -> MertonOracle:
    """Oracle from a kernel whose running and terminal utilities are matching CRRA."""
    from .utility import CRRAUtility

    u, u_T = kernel.u, kernel.u_T
    if not (isinstance(u, CRRAUtility) and isinstance(u_T, CRRAUtility)):
        raise PreconditionError("closed-form reference requires CRRA running and terminal utility")
    if abs(u.gamma - u_T.gamma) > 1e-12:
        raise PreconditionError("closed-form reference requires matching CRRA exponents")
    return MertonOracle(params, u.gamma)
