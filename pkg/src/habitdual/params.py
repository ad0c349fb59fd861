"""Market and preference constants shared by every stage of the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError


@dataclass(frozen=True)
class MarketParams:
    """Constant market coefficients and the drawdown fraction.

    ``kappa`` is the market price of risk ``(mu - r) / sigma`` and is derived,
    not supplied.
    """

    r: float        # risk-free rate, >= 0
    mu: float       # risky drift, must exceed r
    sigma: float    # volatility, > 0
    rho: float      # utility discount rate, > 0
    b: float        # drawdown fraction, in [0, 1]
    T: float        # horizon, > 0
    kappa: float = field(init=False)

    def __post_init__(self):
        if self.r < 0:
            raise PreconditionError(f"r must be >= 0, got {self.r}")
        if self.mu <= self.r:
            raise PreconditionError(f"mu must exceed r, got mu={self.mu}, r={self.r}")
        if self.sigma <= 0:
            raise PreconditionError(f"sigma must be > 0, got {self.sigma}")
        if self.rho <= 0:
            raise PreconditionError(f"rho must be > 0, got {self.rho}")
        if not 0.0 <= self.b <= 1.0:
            raise PreconditionError(f"b must lie in [0, 1], got {self.b}")
        if self.T <= 0:
            raise PreconditionError(f"T must be > 0, got {self.T}")
        object.__setattr__(self, "kappa", (self.mu - self.r) / self.sigma)

    def wealth_floor(self, h, tau):
        """Minimal wealth able to finance consumption b*h over remaining time tau."""
        if self.r == 0.0:
            return self.b * h * tau
        return self.b * h / self.r * -np.expm1(-self.r * tau)
