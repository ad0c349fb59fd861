"""Free-boundary extraction from obstacle solutions and its habit inversion.

For each habit slice the boundary z*(tau, h) is the right edge of the contact
set {w = 0}; h*(z, tau) inverts the (decreasing) map h -> z*(tau, h).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, PreconditionError
from .obstacle import ObstacleSolution


@dataclass
class BoundaryCurve:
    """z*(tau, h) for one habit slice, with truncation flags per tau node.

    ``exited_left[j]`` marks w > tol on the whole row (boundary left the box,
    value clamped to z_min); ``degenerate[j]`` marks w <= tol everywhere
    (all-contact row, value clamped to z_max).
    """

    h: float
    tau_nodes: np.ndarray
    z_star: np.ndarray
    z_nodes: np.ndarray
    exited_left: np.ndarray
    degenerate: np.ndarray

    @property
    def dz(self) -> float:
        return float(self.z_nodes[1] - self.z_nodes[0])

    def at(self, tau: float) -> float:
        """Piecewise-linear evaluation in tau."""
        return float(np.interp(tau, self.tau_nodes, self.z_star))


def extract_boundary(
    sol: ObstacleSolution, zero_tol: float = 1e-9, lam_tol: float | None = None
) -> BoundaryCurve:
    """Right edge of the contact set per tau row, refined by linear interpolation.

    A node is in contact when w is pinned at zero (w <= zero_tol) by an
    active multiplier (lam > lam_tol).  The multiplier criterion matters:
    in the low-diffusion band where the obstacle source vanishes, w itself
    is positive but decays below any fixed threshold, and thresholding w
    alone would misplace the boundary by the width of that band.

    Sub-cell refinement extrapolates the multiplier ramp of the last two
    contact nodes to its zero crossing: beyond the contact set the stored
    multiplier is clamped at zero and carries no slope, so interpolating
    into the first continuation node would bias the boundary one node high.

    The solution must be nondecreasing in z (beyond -zero_tol); violations
    indicate an upstream solver defect.
    """
    w = sol.w
    lam = sol.lam
    grid = sol.grid
    if lam_tol is None:
        lam_tol = max(100.0 * zero_tol, 1e-7)
    if float(np.diff(w, axis=1).min()) < -zero_tol:
        raise DataError("obstacle solution is not monotone in z; cannot extract boundary")
    z = grid.z_nodes
    n_rows = w.shape[0]
    z_star = np.empty(n_rows)
    exited_left = np.zeros(n_rows, dtype=bool)
    degenerate = np.zeros(n_rows, dtype=bool)
    contact = (w <= zero_tol) & (lam > lam_tol)
    for j in range(n_rows):
        idx = np.flatnonzero(contact[j])
        if idx.size == 0:
            z_star[j] = grid.z_min
            exited_left[j] = True
            continue
        k = int(idx[-1])
        if k >= grid.nz - 1:
            z_star[j] = grid.z_max
            degenerate[j] = True
            continue
        ramp = lam[j, k - 1] - lam[j, k] if k >= 1 else 0.0
        frac = lam[j, k] / ramp if ramp > 0 else 0.0
        z_star[j] = z[k] + grid.dz * min(max(frac, 0.0), 1.0)
    return BoundaryCurve(
        h=sol.h,
        tau_nodes=grid.tau_nodes.copy(),
        z_star=z_star,
        z_nodes=z.copy(),
        exited_left=exited_left,
        degenerate=degenerate,
    )


@dataclass
class InverseBoundary:
    """h*(z, tau) on the tensor grid, 0 to the right of the smallest-habit boundary.

    Values left of the largest-habit boundary clamp at h_grid.max (the true
    inverse may exceed it there; consumers treat the top row as a cap).
    """

    z_nodes: np.ndarray
    tau_nodes: np.ndarray
    h_grid: np.ndarray
    h_star: np.ndarray  # shape (n_tau + 1, nz)

    def at(self, z: float, tau: float) -> float:
        """Bilinear evaluation on the grid, clamped at the edges."""
        j = int(np.clip(np.searchsorted(self.tau_nodes, tau) - 1, 0, self.tau_nodes.size - 2))
        i = int(np.clip(np.searchsorted(self.z_nodes, z) - 1, 0, self.z_nodes.size - 2))
        wt = np.clip((tau - self.tau_nodes[j]) / (self.tau_nodes[j + 1] - self.tau_nodes[j]), 0, 1)
        wz = np.clip((z - self.z_nodes[i]) / (self.z_nodes[i + 1] - self.z_nodes[i]), 0, 1)
        top = (1 - wz) * self.h_star[j, i] + wz * self.h_star[j, i + 1]
        bot = (1 - wz) * self.h_star[j + 1, i] + wz * self.h_star[j + 1, i + 1]
        return float((1 - wt) * top + wt * bot)


def invert_boundary(curves: list[BoundaryCurve]) -> InverseBoundary:
    """Monotone piecewise-linear inversion of h -> z*(tau, h) per tau node.

    Curves must come from a strictly increasing habit grid; crossings beyond
    one grid cell are a data error.  A single curve degenerates to a step
    function at its own habit level.
    """
    if not curves:
        raise PreconditionError("need at least one boundary curve")
    h_grid = np.array([c.h for c in curves])
    if np.any(np.diff(h_grid) <= 0):
        raise PreconditionError("curves must cover a strictly increasing habit grid")
    tau_nodes = curves[0].tau_nodes
    z_nodes = curves[0].z_nodes
    for c in curves[1:]:
        if c.tau_nodes.shape != tau_nodes.shape or not np.allclose(c.tau_nodes, tau_nodes):
            raise PreconditionError("curves must share one tau grid")
    zs = np.stack([c.z_star for c in curves])  # (n_h, n_tau+1)
    dz = curves[0].dz

    h_star = np.empty((tau_nodes.size, z_nodes.size))
    h_max = h_grid[-1]
    for j in range(tau_nodes.size):
        col = zs[:, j]
        if np.any(np.diff(col) > dz + 1e-12):
            raise DataError(f"boundary curves cross in h at tau index {j}")
        asc = np.minimum.accumulate(col)[::-1]  # ascending over reversed h order
        h_rev = h_grid[::-1]
        vals = np.interp(z_nodes, asc, h_rev, left=h_max, right=0.0)
        # to the right of the smallest-habit boundary the inverse is 0
        h_star[j] = np.where(z_nodes > asc[-1], 0.0, vals)
    return InverseBoundary(
        z_nodes=z_nodes.copy(), tau_nodes=tau_nodes.copy(), h_grid=h_grid, h_star=h_star
    )
