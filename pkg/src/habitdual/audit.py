"""Invariant re-checks over stored artifact directories.

Reads the artifacts written by the ``solve`` verb and re-validates the
mathematical invariants each stage guarantees, without re-running any
solver.  Produces a machine-readable report: one entry per invariant with
the measured extreme and its tolerance.  Hard failures (sign/monotonicity
violations, hash mismatches, threshold ordering) make the audit exit
nonzero; informational entries (boundary-gap measurements) never do.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .config import build_config
from .errors import DataError

HARD_TOL = 1e-7
SOFT_TOL = 1e-6


class MissingArtifactError(FileNotFoundError):
    """A required artifact file is absent from the directory."""


def _require(directory, name):
    path = os.path.join(directory, name)
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing artifact: {name}")
    return path


def _read_csv(path, n_cols):
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    if data.shape[1] != n_cols:
        raise DataError(f"{os.path.basename(path)}: expected {n_cols} columns")
    return data


def _entry(checks, name, passed, detail, hard=True):
    checks.append({"name": name, "passed": bool(passed), "detail": detail, "hard": hard})
    return bool(passed) or not hard


def audit_invariants(directory):
    """Return (report dict, all-hard-checks-passed flag)."""
    import yaml

    checks = []
    ok = True

    manifest_path = _require(directory, "manifest.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    for name, recorded in manifest.get("files", {}).items():
        path = _require(directory, name)
        with open(path, "rb") as fh:
            actual = hashlib.sha256(fh.read()).hexdigest()
        ok &= _entry(
            checks,
            f"manifest-hash:{name}",
            actual == recorded,
            "content hash matches manifest" if actual == recorded else "hash mismatch",
        )

    with open(_require(directory, "config.yaml")) as fh:
        cfg = build_config(yaml.safe_load(fh))
    grid, params, kernel = cfg.grid, cfg.market, cfg.kernel
    n_h, n_t, nz = cfg.h_grid.size, grid.n_tau + 1, grid.nz

    # --- obstacle surface invariants -------------------------------------
    wdata = _read_csv(_require(directory, "w_surface.csv"), 4)
    if wdata.shape[0] != n_h * n_t * nz:
        raise DataError("w_surface.csv row count does not match the config grid")
    w = wdata[:, 3].reshape(n_h, n_t, nz)
    z = grid.z_nodes

    w_min = float(w.min())
    ok &= _entry(checks, "w-nonnegative", w_min >= -HARD_TOL, f"min w = {w_min:.3e}")

    cap_excess = float((w - np.exp(z)[None, None, :] / params.r).max()) if params.r > 0 else -np.inf
    ok &= _entry(checks, "w-growth-cap", cap_excess <= HARD_TOL, f"max w - e^z/r = {cap_excess:.3e}")

    dz_min = float(np.diff(w, axis=2).min())
    ok &= _entry(checks, "w-monotone-z", dz_min >= -HARD_TOL, f"min z-increment = {dz_min:.3e}")

    dtau_min = float(np.diff(w, axis=1).min())
    ok &= _entry(checks, "w-monotone-tau", dtau_min >= -HARD_TOL, f"min tau-increment = {dtau_min:.3e}")

    if n_h > 1:
        dh_min = float(np.diff(w, axis=0).min())
        ok &= _entry(
            checks, "w-monotone-habit", dh_min >= -SOFT_TOL,
            f"min habit-increment = {dh_min:.3e}",
        )

    # --- free boundary ----------------------------------------------------
    bdata = _read_csv(_require(directory, "boundary_dual.csv"), 3)
    if bdata.shape[0] != n_h * n_t:
        raise DataError("boundary_dual.csv row count does not match the config grid")
    z_star = bdata[:, 2].reshape(n_h, n_t)
    ln_uph = np.log(np.asarray(kernel.u.marginal(cfg.h_grid), dtype=float))

    excess = float((z_star - ln_uph[:, None]).max())
    ok &= _entry(
        checks, "boundary-below-marginal-utility", excess <= grid.dz + HARD_TOL,
        f"max z_star - ln U'(h) = {excess:.3e} (allowance one cell = {grid.dz:.3e})",
    )
    tau_inc = float(np.diff(z_star, axis=1).max())
    ok &= _entry(
        checks, "boundary-monotone-tau", tau_inc <= grid.dz + HARD_TOL,
        f"max tau-increment = {tau_inc:.3e} (one-cell allowance)",
    )
    if n_h > 1:
        h_inc = float(np.diff(z_star, axis=0).max())
        ok &= _entry(
            checks, "boundary-monotone-habit", h_inc <= grid.dz + HARD_TOL,
            f"max habit-increment = {h_inc:.3e} (one-cell allowance)",
        )
    gap = float(np.abs(z_star[:, 1] - ln_uph).max()) if n_t > 1 else 0.0
    _entry(
        checks, "boundary-first-step-gap",
        True,
        f"max |z_star(d_tau, h) - ln U'(h)| = {gap:.3e}",
        hard=False,
    )

    # --- primal thresholds ------------------------------------------------
    tdata = _read_csv(_require(directory, "thresholds.csv"), 5)
    x_l, x_h, x_s = tdata[:, 2], tdata[:, 3], tdata[:, 4]
    order_lh = float((x_l - x_h).max())
    order_hs = float((x_h - x_s).max())
    ok &= _entry(
        checks, "threshold-ordering",
        order_lh < 0.0 and order_hs <= HARD_TOL,
        f"max x_L - x_H = {order_lh:.3e}, max x_H - x_star = {order_hs:.3e}",
    )

    report = {
        "schema_version": 1,
        "directory": os.path.abspath(directory),
        "passed": bool(ok),
        "checks": checks,
    }
    return report, bool(ok)
