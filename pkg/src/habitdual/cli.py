"""Command-line pipeline driver.

Verbs:
  solve          run the full pipeline and write all artifacts
  simulate       run the pipeline, then the Monte-Carlo verification
  export-probes  evaluate value/policy probes into policy_samples.csv
  audit          re-check invariants of a stored artifact directory

Exit status: 0 success, 1 audit hard failure, 2 config/schema or missing
artifact, 3 numerical-stage failure (message names the stage).

All floats serialize with 17 significant digits so artifacts round-trip
exactly; every file is written atomically and listed in manifest.json with a
content hash.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile

import numpy as np
import yaml

from . import __version__, audit as audit_mod
from ._backend import backend_name
from .boundary import extract_boundary, invert_boundary
from .config import RunConfig, SchemaError, load_config
from .dual import integrate_over_habit, solve_capped_linear
from .errors import (
    DataError,
    DomainError,
    PreconditionError,
    SchemeError,
    TruncationError,
)
from .obstacle import sweep_habit_slices
from .primal import PrimalPolicy
from .simulate import simulate_policy

FLOAT_FMT = "%.17g"

_NUMERICAL_ERRORS = (SchemeError, DataError, DomainError, PreconditionError, TruncationError)


class StageError(RuntimeError):
    """A numerical stage failed; carries the stage name for the exit message."""

    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")


def atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_csv(header, columns):
    """Render columns (equal-length 1-d arrays) to CSV text at full precision."""
    cols = [np.asarray(c) for c in columns]
    parts = []
    for c in cols:
        if c.dtype.kind in "fc":
            parts.append(np.char.mod(FLOAT_FMT, c))
        else:
            parts.append(c.astype(str))
    stacked = np.stack(parts)
    body = "\n".join(",".join(row) for row in stacked.T)
    return ",".join(header) + "\n" + body + "\n"


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except _NUMERICAL_ERRORS as exc:
        raise StageError(name, exc) from exc


def run_stages(cfg: RunConfig, threads: int = 1):
    """obstacle -> boundary -> dual -> primal; returns the policy and parts."""
    sols = _stage(
        "obstacle", sweep_habit_slices,
        cfg.market, cfg.kernel, cfg.grid, cfg.h_grid, pen=cfg.penalty, threads=threads,
    )
    curves = _stage("boundary", lambda: [extract_boundary(s) for s in sols])
    _stage("boundary", invert_boundary, curves)
    phi = _stage("dual", solve_capped_linear, cfg.market, cfg.kernel, cfg.grid, cfg.h_bar)
    surface = _stage("dual", integrate_over_habit, phi, sols, cfg.market, cfg.kernel)
    policy = _stage("primal", PrimalPolicy, surface, curves)
    return sols, curves, surface, policy


def default_probes(cfg: RunConfig):
    """Fallback probe lattice when the config lists none."""
    xs = (0.5, 1.0, 2.0, 5.0)
    ts = (0.0, 0.5 * cfg.market.T)
    hs = (float(cfg.h_grid[0] * 2.0), 1.0) if cfg.h_grid[0] * 2.0 < 1.0 else (1.0,)
    return [(x, t, h) for x in xs for t in ts for h in hs]


def write_artifacts(cfg: RunConfig, out_dir, sols, curves, surface, policy, threads=1):
    files = {}

    def emit(name, text):
        path = os.path.join(out_dir, name)
        atomic_write_text(path, text)
        files[name] = sha256_file(path)

    grid = cfg.grid
    z = grid.z_nodes
    tau = grid.tau_nodes
    n_tau1, nz = tau.size, z.size

    # dense obstacle stack, rows ordered (h, tau, z)
    w = np.stack([s.w for s in sols])
    n_h = w.shape[0]
    z_col = np.tile(z, n_h * n_tau1)
    tau_col = np.tile(np.repeat(tau, nz), n_h)
    h_col = np.repeat(cfg.h_grid, n_tau1 * nz)
    emit("w_surface.csv", format_csv(("z", "tau", "h", "w"), (z_col, tau_col, h_col, w.ravel())))

    zs = np.stack([c.z_star for c in curves])  # (h, tau)
    emit(
        "boundary_dual.csv",
        format_csv(
            ("tau", "h", "z_star"),
            (np.tile(tau, n_h), np.repeat(cfg.h_grid, n_tau1), zs.ravel()),
        ),
    )

    t_col, h_col2, xl, xh, xs_ = [], [], [], [], []
    for h in cfg.h_grid:
        for tv in tau:
            t = cfg.market.T - float(tv)
            lo, hi, star = policy.thresholds(t, float(h))
            t_col.append(t)
            h_col2.append(float(h))
            xl.append(lo)
            xh.append(hi)
            xs_.append(star)
    emit(
        "thresholds.csv",
        format_csv(("t", "h", "x_L", "x_H", "x_star"), (t_col, h_col2, xl, xh, xs_)),
    )

    # decimated dual samples for plotting
    zi = np.arange(0, nz, max(1, nz // 70))
    ti = np.arange(0, n_tau1, max(1, n_tau1 // 20))
    zz = np.tile(z[zi], n_h * ti.size)
    tt = np.tile(np.repeat(tau[ti], zi.size), n_h)
    hh = np.repeat(cfg.h_grid, ti.size * zi.size)
    u_s = surface.u[:, ti][:, :, zi].ravel()
    vy_s = surface.v_y[:, ti][:, :, zi].ravel()
    emit("dual_samples.csv", format_csv(("z", "tau", "h", "u", "v_y"), (zz, tt, hh, u_s, vy_s)))

    emit("policy_samples.csv", probes_csv(cfg, policy))
    emit("config.yaml", yaml.safe_dump(cfg.raw, sort_keys=True))

    manifest = {
        "schema_version": 1,
        "package_version": __version__,
        "backend": backend_name(),
        "numpy_version": np.__version__,
        "config_sha256": hashlib.sha256(
            yaml.safe_dump(cfg.raw, sort_keys=True).encode()
        ).hexdigest(),
        "files": files,
    }
    atomic_write_text(
        os.path.join(out_dir, "manifest.json"),
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
    )
    return files


def probes_csv(cfg: RunConfig, policy: PrimalPolicy):
    probes = cfg.value_probes or default_probes(cfg)
    rows = {k: [] for k in ("x", "t", "h", "V", "pi", "c", "region")}
    for x, t, h in probes:
        try:
            value = policy.value_at(x, t, h)
            pi, c, region = policy.feedback(x, t, h)
        except (DomainError, TruncationError):
            continue
        rows["x"].append(x)
        rows["t"].append(t)
        rows["h"].append(h)
        rows["V"].append(value)
        rows["pi"].append(pi)
        rows["c"].append(c)
        rows["region"].append(region)
    return format_csv(
        ("x", "t", "h", "V", "pi", "c", "region"),
        tuple(np.asarray(rows[k]) for k in ("x", "t", "h", "V", "pi", "c", "region")),
    )


def cmd_solve(cfg, out_dir, threads):
    parts = run_stages(cfg, threads=threads)
    write_artifacts(cfg, out_dir, *parts, threads=threads)
    return 0


def cmd_simulate(cfg, out_dir, threads):
    if cfg.sim is None:
        raise SchemaError("sim", "missing required section for the simulate verb")
    *_, policy = run_stages(cfg, threads=threads)
    result = _stage("simulate", simulate_policy, policy, cfg.market, cfg.sim)
    report = {"schema_version": 1, "sim": result.as_dict()}
    atomic_write_text(
        os.path.join(out_dir, "sim_report.json"),
        json.dumps(report, indent=2, sort_keys=True) + "\n",
    )
    return 0


def cmd_export_probes(cfg, out_dir, threads):
    *_, policy = run_stages(cfg, threads=threads)
    atomic_write_text(os.path.join(out_dir, "policy_samples.csv"), probes_csv(cfg, policy))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="habitdual", description=__doc__)
    parser.add_argument("verb", choices=("solve", "audit", "simulate", "export-probes"))
    parser.add_argument("--config", help="YAML run configuration (all verbs except audit)")
    parser.add_argument("--out", help="artifact directory (overrides outputs.directory)")
    parser.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("HABITDUAL_THREADS", "1")),
        help="worker threads for the habit-slice sweep",
    )
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted config override, repeatable",
    )
    args = parser.parse_args(argv)

    try:
        if args.verb == "audit":
            if not args.out:
                print("audit requires --out pointing at an artifact directory", file=sys.stderr)
                return 2
            report, ok = audit_mod.audit_invariants(args.out)
            atomic_write_text(
                os.path.join(args.out, "audit_report.json"),
                json.dumps(report, indent=2, sort_keys=True) + "\n",
            )
            for entry in report["checks"]:
                status = "PASS" if entry["passed"] else "FAIL"
                print(f"{status} {entry['name']}: {entry['detail']}")
            return 0 if ok else 1

        if not args.config:
            print(f"{args.verb} requires --config", file=sys.stderr)
            return 2
        cfg = load_config(args.config, overrides=args.override)
        out_dir = args.out or cfg.out_dir
        os.makedirs(out_dir, exist_ok=True)
        handler = {
            "solve": cmd_solve,
            "simulate": cmd_simulate,
            "export-probes": cmd_export_probes,
        }[args.verb]
        return handler(cfg, out_dir, args.threads)
    except SchemaError as exc:
        print(f"config error at {exc.path}: {exc}", file=sys.stderr)
        return 2
    except audit_mod.MissingArtifactError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
