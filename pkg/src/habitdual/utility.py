"""Utility functions and their Legendre-transform companions.

Built-in families: CRRA (power), logarithmic, CARA (exponential), a
table-based utility with monotone-spline inversion, and the identically-zero
terminal utility.  ``UtilityKernel`` bundles a running utility, a terminal
utility, the drawdown fraction ``b``, and the growth constants used by the
value-function sandwich bounds.

All evaluations accept scalars or numpy arrays.  CARA has a finite marginal
utility at zero consumption, so the low-``y`` branch of the terminal Legendre
transform clamps at ``U_T(0)`` instead of never triggering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, PreconditionError, UnboundedTransformError


class CRRAUtility:
    """Power utility c^(1-gamma)/(1-gamma), gamma > 0, gamma != 1."""

    def __init__(self, gamma: float):
        if gamma <= 0 or gamma == 1.0:
            raise PreconditionError(f"CRRA requires gamma > 0, gamma != 1, got {gamma}")
        self.gamma = gamma

    def value(self, c):
        c = np.asarray(c, dtype=float)
        return c ** (1.0 - self.gamma) / (1.0 - self.gamma)

    def marginal(self, c):
        c = np.asarray(c, dtype=float)
        return c ** (-self.gamma)

    def marginal_inverse(self, y):
        y = np.asarray(y, dtype=float)
        return y ** (-1.0 / self.gamma)

    def marginal_slope(self, c):
        c = np.asarray(c, dtype=float)
        return -self.gamma * c ** (-self.gamma - 1.0)

    @property
    def value_at_zero(self):
        return 0.0 if self.gamma < 1.0 else -math.inf

    @property
    def marginal_at_zero(self):
        return math.inf

    def describe(self):
        return {"kind": "crra", "gamma": self.gamma}


class LogUtility:
    """Logarithmic utility ln(c)."""

    def value(self, c):
        return np.log(np.asarray(c, dtype=float))

    def marginal(self, c):
        return 1.0 / np.asarray(c, dtype=float)

    def marginal_inverse(self, y):
        return 1.0 / np.asarray(y, dtype=float)

    def marginal_slope(self, c):
        return -np.asarray(c, dtype=float) ** -2.0

    @property
    def value_at_zero(self):
        return -math.inf

    @property
    def marginal_at_zero(self):
        return math.inf

    def describe(self):
        return {"kind": "log"}


class CARAUtility:
    """Exponential utility -exp(-alpha c)/alpha, alpha > 0.

    Marginal utility at zero is finite (= 1), so Legendre transforms clamp at
    U(0) = -1/alpha for y >= 1.
    """

    def __init__(self, alpha: float):
        if alpha <= 0:
            raise PreconditionError(f"CARA requires alpha > 0, got {alpha}")
        self.alpha = alpha

    def value(self, c):
        c = np.asarray(c, dtype=float)
        return -np.exp(-self.alpha * c) / self.alpha

    def marginal(self, c):
        c = np.asarray(c, dtype=float)
        return np.exp(-self.alpha * c)

    def marginal_inverse(self, y):
        y = np.asarray(y, dtype=float)
        return -np.log(y) / self.alpha

    def marginal_slope(self, c):
        c = np.asarray(c, dtype=float)
        return -self.alpha * np.exp(-self.alpha * c)

    @property
    def value_at_zero(self):
        return -1.0 / self.alpha

    @property
    def marginal_at_zero(self):
        return 1.0

    def describe(self):
        return {"kind": "cara", "alpha": self.alpha}


class TabulatedUtility:
    """User-supplied utility sampled on a consumption grid.

    Values are interpolated with a monotone (PCHIP) spline; the marginal
    utility is its derivative and is inverted through a monotone
    interpolation of the sampled marginals.  Evaluations outside the sampled
    consumption range raise ``UnboundedTransformError`` when an inversion is
    required there.
    """

    def __init__(self, c_nodes, u_values):
        from scipy.interpolate import PchipInterpolator

        c_nodes = np.asarray(c_nodes, dtype=float)
        u_values = np.asarray(u_values, dtype=float)
        if c_nodes.ndim != 1 or c_nodes.shape != u_values.shape or c_nodes.size < 4:
            raise PreconditionError("tabulated utility needs >= 4 matching 1-d samples")
        if np.any(np.diff(c_nodes) <= 0):
            raise PreconditionError("consumption nodes must be strictly increasing")
        if np.any(np.diff(u_values) <= 0):
            raise PreconditionError("utility samples must be strictly increasing")
        self._c = c_nodes
        self._spline = PchipInterpolator(c_nodes, u_values)
        self._dspline = self._spline.derivative()
        m = self._dspline(c_nodes)
        if np.any(m <= 0) or np.any(np.diff(m) >= 0):
            raise PreconditionError("sampled marginal utility must be positive and strictly decreasing")
        # invert the decreasing marginal by interpolating (m, c) monotonically
        self._m = m
        self._inv = PchipInterpolator(m[::-1], c_nodes[::-1])
        self._ddspline = self._dspline.derivative()

    def value(self, c):
        return self._spline(np.asarray(c, dtype=float))

    def marginal(self, c):
        return self._dspline(np.asarray(c, dtype=float))

    def marginal_slope(self, c):
        return self._ddspline(np.asarray(c, dtype=float))

    def marginal_inverse(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < self._m[-1]) or np.any(y > self._m[0]):
            raise UnboundedTransformError(
                "marginal-utility value outside the tabulated range; supremum not attained"
            )
        return self._inv(y)

    @property
    def value_at_zero(self):
        return -math.inf

    @property
    def marginal_at_zero(self):
        return float(self._m[0])

    def describe(self):
        return {"kind": "tabulated", "n_samples": int(self._c.size)}


class ZeroUtility:
    """The identically-zero terminal utility."""

    def value(self, c):
        return np.zeros_like(np.asarray(c, dtype=float))

    def marginal(self, c):
        return np.zeros_like(np.asarray(c, dtype=float))

    def marginal_inverse(self, y):
        raise DomainError("zero utility has no marginal inverse")

    def marginal_slope(self, c):
        return np.zeros_like(np.asarray(c, dtype=float))

    @property
    def value_at_zero(self):
        return 0.0

    @property
    def marginal_at_zero(self):
        return 0.0

    def describe(self):
        return {"kind": "zero"}


def _legendre(util, y):
    """sup_{c>0} (U(c) - c y) for a single utility; y may be an array."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("Legendre transform requires y > 0")
    m0 = util.marginal_at_zero
    out = np.empty_like(y)
    clamped = y >= m0
    if np.any(clamped):
        u0 = util.value_at_zero
        if not np.isfinite(u0):
            raise UnboundedTransformError("transform unbounded at the clamped branch")
        out[clamped] = u0
    interior = ~clamped
    if np.any(interior):
        c = util.marginal_inverse(y[interior])
        out[interior] = util.value(c) - c * y[interior]
    return out


@dataclass
class UtilityKernel:
    """Running utility, terminal utility, drawdown fraction, growth constants.

    ``gamma`` in (0,1) and ``K`` bound the running utility from above by a
    power function; ``theta`` > 1 bounds the terminal utility from below.
    They are configuration inputs, never inferred from the utility choice.
    """

    u: object
    u_T: object = field(default_factory=ZeroUtility)
    b: float = 0.0
    gamma: float = 0.5
    theta: float = 2.0
    K: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise PreconditionError(f"gamma must lie in (0,1), got {self.gamma}")
        if self.theta <= 1.0:
            raise PreconditionError(f"theta must exceed 1, got {self.theta}")
        if self.K <= 0.0:
            raise PreconditionError(f"K must be > 0, got {self.K}")
        if not 0.0 <= self.b <= 1.0:
            raise PreconditionError(f"b must lie in [0,1], got {self.b}")

    # -- constrained transform ------------------------------------------------

    def consumption(self, y, h):
        """argmax of U(c) - c y over the band [b h, h].

        Branch joins resolve to the left branch at exact equality.
        """
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0) or h <= 0:
            raise DomainError("consumption map requires y > 0 and h > 0")
        uh = float(self.u.marginal(h))
        c = np.full_like(y, h)
        if self.b > 0.0:
            ubh = float(self.u.marginal(self.b * h))
        else:
            ubh = self.u.marginal_at_zero
        mid = (y > uh) & (y < ubh)
        if np.any(mid):
            c[mid] = self.u.marginal_inverse(y[mid])
        low = y >= ubh
        c[low] = self.b * h
        return c

    def hat_u(self, y, h):
        """max over c in [b h, h] of U(c) - c y (three-branch closed form)."""
        scalar = np.isscalar(y)
        c = self.consumption(np.atleast_1d(y), h)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        val = self.u.value(c) - c * y
        if self.b == 0.0:
            # floor consumption 0: value branch uses U(0) where it applies
            at_floor = c == 0.0
            if np.any(at_floor):
                val[at_floor] = self.u.value_at_zero
        return float(val[0]) if scalar else val

    def f_source(self, z, h):
        """d/dh of hat_u(e^z, h): the obstacle-problem source term.

        Positive left of ln U'(h), zero on the interior band, negative right
        of ln U'(b h); boundary points evaluate on the outer branches.
        """
        if h <= 0:
            raise DomainError("f_source requires h > 0")
        scalar = np.isscalar(z)
        z = np.atleast_1d(np.asarray(z, dtype=float))
        ez = np.exp(z)
        uh = float(self.u.marginal(h))
        out = np.zeros_like(ez)
        left = ez <= uh
        out[left] = uh - ez[left]
        if self.b > 0.0:
            ubh = float(self.u.marginal(self.b * h))
            right = ez >= ubh
            out[right] = self.b * (ubh - ez[right])
        return float(out[0]) if scalar else out

    # -- unconstrained transforms --------------------------------------------

    def tilde_u(self, y):
        """sup_{c>0}(U(c) - c y) for the running utility."""
        scalar = np.isscalar(y)
        out = _legendre(self.u, np.atleast_1d(y))
        return float(out[0]) if scalar else out

    def tilde_u_T(self, y):
        """sup_{x>0}(U_T(x) - x y) for the terminal utility; 0 when U_T is zero."""
        scalar = np.isscalar(y)
        out = _legendre(self.u_T, np.atleast_1d(y))
        return float(out[0]) if scalar else out

    def tilde_u_T_slope(self, y):
        """d/dy of the terminal transform, i.e. -x*(y); 0 on the clamped branch."""
        scalar = np.isscalar(y)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if np.any(y <= 0):
            raise DomainError("slope requires y > 0")
        out = np.zeros_like(y)
        interior = y < self.u_T.marginal_at_zero
        if np.any(interior):
            out[interior] = -np.asarray(self.u_T.marginal_inverse(y[interior]), dtype=float)
        return float(out[0]) if scalar else out

    def tilde_u_T_curvature(self, y):
        """d2/dy2 of the terminal transform: -1/U_T''(x*(y)); 0 when clamped."""
        scalar = np.isscalar(y)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if np.any(y <= 0):
            raise DomainError("curvature requires y > 0")
        out = np.zeros_like(y)
        interior = y < self.u_T.marginal_at_zero
        if np.any(interior):
            x = np.asarray(self.u_T.marginal_inverse(y[interior]), dtype=float)
            out[interior] = -1.0 / np.asarray(self.u_T.marginal_slope(x), dtype=float)
        return float(out[0]) if scalar else out

    def habit_source_lipschitz(self, h):
        """max(-U''(h), -b^2 U''(bh)): Lipschitz constant of the source in h."""
        if h <= 0:
            raise DomainError("habit_source_lipschitz requires h > 0")
        k1 = -float(self.u.marginal_slope(h))
        k2 = -self.b**2 * float(self.u.marginal_slope(self.b * h)) if self.b > 0 else 0.0
        return max(k1, k2)

    def describe(self):
        return {
            "u": self.u.describe(),
            "u_T": self.u_T.describe(),
            "b": self.b,
            "gamma": self.gamma,
            "theta": self.theta,
            "K": self.K,
        }


_UTILITY_KINDS = {
    "crra": lambda spec: CRRAUtility(float(spec["gamma"])),
    "log": lambda spec: LogUtility(),
    "cara": lambda spec: CARAUtility(float(spec["alpha"])),
    "zero": lambda spec: ZeroUtility(),
    "tabulated": lambda spec: TabulatedUtility(spec["c_nodes"], spec["u_values"]),
}


def make_utility(spec: dict):
    """Build a utility from a config mapping with a ``kind`` discriminator."""
    kind = spec.get("kind")
    if kind not in _UTILITY_KINDS:
        raise PreconditionError(f"unknown utility kind {kind!r}; expected one of {sorted(_UTILITY_KINDS)}")
    return _UTILITY_KINDS[kind](spec)
