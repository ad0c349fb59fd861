"""Monte-Carlo verification of the feedback policy.

Simulates the controlled wealth/habit process under the reconstructed
policies and estimates realized expected utility for comparison against the
primal value.  The habit ratchets through the monotone inverse of the
switching threshold h -> x_star(s, h); paths that would cross the wealth
floor are projected onto it and absorbed with the minimal policy (all-cash,
floor consumption), which biases the estimate downward and preserves the
one-sided verification inequality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DataError, PreconditionError
from .params import MarketParams
from .primal import PrimalPolicy


@dataclass(frozen=True)
class SimConfig:
    """Path count, step count, deterministic seed, and the initial state."""

    n_paths: int
    n_steps: int
    seed: int
    x0: float
    h0: float
    t0: float = 0.0
    antithetic: bool = True

    def validate(self, params: MarketParams):
        if self.n_paths < 1 or self.n_steps < 1:
            raise PreconditionError("need n_paths >= 1 and n_steps >= 1")
        if self.t0 < 0 or self.t0 >= params.T:
            raise PreconditionError(f"t0 must lie in [0, T), got {self.t0}")
        if self.h0 <= 0:
            raise PreconditionError("h0 must be positive")
        floor = float(params.wealth_floor(self.h0, params.T - self.t0))
        if self.x0 <= floor:
            raise PreconditionError(
                f"x0={self.x0} must exceed the initial consumption floor {floor}"
            )


@dataclass
class SimResult:
    """Discounted-utility estimate with its sampling error and path diagnostics."""

    value_estimate: float
    std_error: float
    floor_breaches: int
    habit_updates: int
    excluded_paths: int
    n_paths: int
    min_band_slack: float  # min over live steps of c - b*H (>= -tol: band respected)
    habit_monotone: bool   # H never decreased along any path

    def as_dict(self):
        return {
            "value_estimate": self.value_estimate,
            "std_error": self.std_error,
            "floor_breaches": self.floor_breaches,
            "habit_updates": self.habit_updates,
            "excluded_paths": self.excluded_paths,
            "n_paths": self.n_paths,
            "min_band_slack": self.min_band_slack,
            "habit_monotone": self.habit_monotone,
        }


class PolicyTables:
    """Policy samplers flattened onto (tau, h, wealth) lookup tables.

    Per (tau node, habit slice) the wealth axis is the image of the z-grid
    under x = -v_y, stored ascending; investment and consumption are carried
    along the same parametrization, so a single monotone interpolation in x
    evaluates both.  x_star rows over the habit grid are made nondecreasing
    (sub-cell noise only) for the ratchet inversion.
    """

    def __init__(self, policy: PrimalPolicy):
        surface = policy.surface
        p = surface.params
        self.params = p
        self.kernel = surface.kernel
        self.h_grid = surface.h_grid.copy()
        self.tau_nodes = surface.tau_nodes.copy()
        n_h, n_t, nz = surface.u.shape
        # ascending wealth parametrization: reverse the z axis
        self.x_tab = np.ascontiguousarray(-surface.v_y[:, :, ::-1])
        if float(np.diff(self.x_tab, axis=2).min()) <= 0:
            raise DataError("dual slope is not strictly monotone; cannot tabulate the policy")
        conv = (surface.u_zz - surface.u_z)[:, :, ::-1]
        y_rev = np.exp(surface.z_nodes)[::-1]
        self.pi_tab = (p.kappa / p.sigma) * conv / y_rev[None, None, :]
        self.c_tab = np.empty_like(self.pi_tab)
        for k, h in enumerate(self.h_grid):
            self.c_tab[k] = self.kernel.consumption(
                np.broadcast_to(y_rev, (n_t, nz)).ravel(), float(h)
            ).reshape(n_t, nz)
        # switching wealth per (tau, h)
        z_star = np.stack([c.z_star for c in policy.curves])  # (h, tau)
        self.x_star_tab = np.empty((n_t, n_h))
        for k in range(n_h):
            for j in range(n_t):
                vy = surface.v_y[k, j]
                self.x_star_tab[j, k] = -np.interp(z_star[k, j], surface.z_nodes, vy)
        # enforce the analytic monotonicity in h against sub-cell noise
        self.x_star_tab = np.maximum.accumulate(self.x_star_tab, axis=1)

    def blend_tau(self, tau: float):
        """(x_rows, val_rows, x_star_row) linearly blended at one tau."""
        nodes = self.tau_nodes
        j = int(np.clip(np.searchsorted(nodes, tau) - 1, 0, nodes.size - 2))
        wt = float(np.clip((tau - nodes[j]) / (nodes[j + 1] - nodes[j]), 0.0, 1.0))
        x_rows = (1.0 - wt) * self.x_tab[:, j] + wt * self.x_tab[:, j + 1]
        pi_rows = (1.0 - wt) * self.pi_tab[:, j] + wt * self.pi_tab[:, j + 1]
        c_rows = (1.0 - wt) * self.c_tab[:, j] + wt * self.c_tab[:, j + 1]
        x_star = (1.0 - wt) * self.x_star_tab[j] + wt * self.x_star_tab[j + 1]
        return (
            np.ascontiguousarray(x_rows),
            np.ascontiguousarray(np.stack([pi_rows, c_rows])),
            x_star,
        )


def _habit_brackets(h_grid, H):
    k = np.clip(np.searchsorted(h_grid, H) - 1, 0, h_grid.size - 2).astype(np.int64)
    wh = np.clip((H - h_grid[k]) / (h_grid[k + 1] - h_grid[k]), 0.0, 1.0)
    return k, wh


def simulate_policy(
    policy: PrimalPolicy | PolicyTables,
    params: MarketParams,
    cfg: SimConfig,
    pi_override=None,
    c_override=None,
    max_excluded_fraction: float = 0.01,
) -> SimResult:
    """Euler-Maruyama estimate of the discounted utility under the policy.

    ``pi_override`` / ``c_override`` are callables ``f(X, H, s) -> array``
    replacing the corresponding feedback (used for comparison policies and
    sanity probes); the habit ratchet and floor projection still apply.
    """
    cfg.validate(params)
    tables = policy if isinstance(policy, PolicyTables) else PolicyTables(policy)
    kernel = tables.kernel
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    n = cfg.n_paths
    if cfg.antithetic and n % 2:
        raise PreconditionError("antithetic pairing needs an even path count")
    n_draw = n // 2 if cfg.antithetic else n

    ds = (params.T - cfg.t0) / cfg.n_steps
    sqrt_ds = np.sqrt(ds)
    h_min, h_max = float(tables.h_grid[0]), float(tables.h_grid[-1])

    X = np.full(n, float(cfg.x0))
    H = np.full(n, float(np.clip(cfg.h0, h_min, h_max)))
    utility = np.zeros(n)
    absorbed = np.zeros(n, dtype=bool)
    excluded = np.zeros(n, dtype=bool)
    habit_updates = 0
    min_band_slack = np.inf
    habit_monotone = True

    x_cap = float(tables.x_tab[:, :, -1].min())  # largest wealth on every table row
    for m in range(cfg.n_steps):
        s = cfg.t0 + m * ds
        tau = params.T - s
        disc = np.exp(-params.rho * (s - cfg.t0))
        x_rows, val_rows, x_star_row = tables.blend_tau(tau)

        # ratchet: habit jumps to the inverse switching level when X exceeds it
        cur_star = np.interp(H, tables.h_grid, x_star_row)
        jump = (X > cur_star) & ~absorbed & ~excluded
        if np.any(jump):
            H_new = np.minimum(np.interp(X[jump], x_star_row, tables.h_grid), h_max)
            if float((H_new - H[jump]).min()) < -1e-12:
                habit_monotone = False
            H[jump] = np.maximum(H[jump], H_new)
            habit_updates += int(jump.sum())

        over = (X > x_cap) & ~excluded
        if np.any(over):
            excluded |= over
        live = ~absorbed & ~excluded

        k_idx, wh = _habit_brackets(tables.h_grid, H)
        vals = _kernels.policy_lookup(X, k_idx, wh, x_rows, val_rows)
        pi, c = vals[0], vals[1]
        if pi_override is not None:
            pi = np.asarray(pi_override(X, H, s), dtype=float)
        if c_override is not None:
            c = np.asarray(c_override(X, H, s), dtype=float)
        pi = np.where(live, pi, 0.0)
        c = np.where(live, c, params.b * H)
        c = np.where(excluded, 0.0, c)
        if np.any(live):
            min_band_slack = min(min_band_slack, float((c - params.b * H)[live].min()))

        utility += np.where(excluded, 0.0, disc * np.asarray(kernel.u.value(c)) * ds)

        if cfg.antithetic:
            half = rng.standard_normal(n_draw)
            dW = np.concatenate([half, -half]) * sqrt_ds
        else:
            dW = rng.standard_normal(n) * sqrt_ds
        X = X + (params.r * X + pi * (params.mu - params.r) - c) * ds + pi * params.sigma * dW

        floor_next = params.wealth_floor(H, params.T - (s + ds))
        hit = (X < floor_next) & ~absorbed & ~excluded
        if np.any(hit):
            absorbed |= hit
        X = np.maximum(X, floor_next)

    disc_T = np.exp(-params.rho * (params.T - cfg.t0))
    utility += np.where(excluded, 0.0, disc_T * np.asarray(kernel.u_T.value(np.maximum(X, 0.0))))

    n_excluded = int(excluded.sum())
    if n_excluded > max_excluded_fraction * n:
        raise DataError(
            f"{n_excluded} of {n} paths left the policy tables; surface box too small"
        )
    keep = ~excluded
    if cfg.antithetic:
        pair_vals = 0.5 * (utility[:n_draw] + utility[n_draw:])
        pair_keep = keep[:n_draw] & keep[n_draw:]
        sample = pair_vals[pair_keep]
    else:
        sample = utility[keep]
    if sample.size == 0:
        raise DataError("no usable paths")
    est = float(sample.mean())
    sem = float(sample.std(ddof=1) / np.sqrt(sample.size)) if sample.size > 1 else 0.0
    return SimResult(
        value_estimate=est,
        std_error=sem,
        floor_breaches=int(absorbed.sum()),
        habit_updates=habit_updates,
        excluded_paths=n_excluded,
        n_paths=n,
        min_band_slack=float(min_band_slack),
        habit_monotone=habit_monotone,
    )


def simulate_batch(policy, params: MarketParams, cfgs: list, **kwargs) -> list:
    """Independent runs with per-run seeds derived from (seed, index).

    Errors are collected in place of results rather than aborting siblings.
    """
    if not cfgs:
        raise PreconditionError("need at least one simulation config")
    tables = policy if isinstance(policy, PolicyTables) else PolicyTables(policy)
    out = []
    for idx, cfg in enumerate(cfgs):
        derived = int(np.random.SeedSequence((cfg.seed, idx)).generate_state(1)[0])
        run_cfg = SimConfig(
            n_paths=cfg.n_paths,
            n_steps=cfg.n_steps,
            seed=derived,
            x0=cfg.x0,
            h0=cfg.h0,
            t0=cfg.t0,
            antithetic=cfg.antithetic,
        )
        try:
            out.append(simulate_policy(tables, params, run_cfg, **kwargs))
        except (DataError, PreconditionError) as exc:
            out.append(exc)
    return out


def clamped_proportion_policy(params: MarketParams, gamma: float):
    """Constant-proportion comparison policy: fixed Merton weights, consumption
    clamped into the drawdown band.

    Returns (pi_override, c_override) for ``simulate_policy``.
    """
    frac_pi = params.kappa / (params.sigma * gamma)
    # stationary consumption fraction of the infinite-horizon problem, floored at
    # a small positive rate; the clamp below dominates its exact level anyway
    frac_c = max(
        params.rho / gamma + (1.0 - 1.0 / gamma) * (params.r + params.kappa**2 / (2.0 * gamma)),
        0.05,
    )

    def pi_override(X, H, s):
        return frac_pi * np.asarray(X, dtype=float)

    def c_override(X, H, s):
        c = frac_c * np.asarray(X, dtype=float)
        return np.clip(c, params.b * np.asarray(H), np.asarray(H))

    return pi_override, c_override
