"""Run-configuration loading and validation.

A run is described by a single YAML tree; every key is validated against the
schema below, unknown keys are rejected, and each section is materialized
into the corresponding solver object.  Validation failures raise
``SchemaError`` carrying the dotted path of the offending field.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import PreconditionError
from .obstacle import Grid1D, PenaltyParams
from .params import MarketParams
from .simulate import SimConfig
from .utility import UtilityKernel, make_utility


class SchemaError(ValueError):
    """A config field is missing, unknown, or has the wrong type/value."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


# schema: section -> field -> (required, caster)
_UTILITY_FIELDS = {
    "kind": (True, str),
    "gamma": (False, float),
    "alpha": (False, float),
    "c_nodes": (False, list),
    "u_values": (False, list),
}

_SCHEMA = {
    "market": {
        "r": (True, float),
        "mu": (True, float),
        "sigma": (True, float),
        "rho": (True, float),
        "b": (True, float),
        "T": (True, float),
    },
    "utility": {
        "u": (True, dict),
        "u_T": (False, dict),
        "growth_gamma": (False, float),
        "growth_theta": (False, float),
        "growth_K": (False, float),
    },
    "grid": {
        "z_min": (True, float),
        "z_max": (True, float),
        "nz": (True, int),
        "n_tau": (True, int),
        "h_min": (True, float),
        "h_max": (True, float),
        "h_count": (True, int),
        "h_spacing": (False, str),
        "h_bar_multiplier": (False, float),
    },
    "penalty": {
        "epsilon": (False, float),
        "newton_tol": (False, float),
        "newton_max_iter": (False, int),
    },
    "sim": {
        "n_paths": (True, int),
        "n_steps": (True, int),
        "seed": (True, int),
        "x0": (True, float),
        "h0": (True, float),
        "t0": (False, float),
        "antithetic": (False, bool),
    },
    "outputs": {
        "directory": (True, str),
        "value_probes": (False, list),
    },
}

_OPTIONAL_SECTIONS = {"penalty", "sim", "outputs"}


@dataclass
class RunConfig:
    """Validated, materialized run description."""

    market: MarketParams
    kernel: UtilityKernel
    grid: Grid1D
    h_grid: np.ndarray
    h_bar: float
    penalty: PenaltyParams
    sim: SimConfig | None
    out_dir: str
    value_probes: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)


def _check_section(name, data, fields):
    if not isinstance(data, dict):
        raise SchemaError(name, f"expected a mapping, got {type(data).__name__}")
    for key in data:
        if key not in fields:
            raise SchemaError(f"{name}.{key}", "unknown field")
    out = {}
    for key, (required, caster) in fields.items():
        if key not in data:
            if required:
                raise SchemaError(f"{name}.{key}", "missing required field")
            continue
        value = data[key]
        path = f"{name}.{key}"
        try:
            if caster is bool:
                if not isinstance(value, bool):
                    raise TypeError
                out[key] = value
            elif caster is int:
                if isinstance(value, bool) or int(value) != value:
                    raise TypeError
                out[key] = int(value)
            elif caster is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise TypeError
                out[key] = float(value)
            elif caster in (list, dict):
                if not isinstance(value, caster):
                    raise TypeError
                out[key] = value
            else:
                if not isinstance(value, str):
                    raise TypeError
                out[key] = value
        except (TypeError, ValueError):
            raise SchemaError(path, f"expected {caster.__name__}, got {value!r}") from None
    return out


def _apply_overrides(tree, overrides):
    """Apply dotted ``key=value`` strings; values parse as YAML scalars."""
    for item in overrides or []:
        if "=" not in item:
            raise SchemaError(item, "override must have the form key=value")
        dotted, _, raw_value = item.partition("=")
        value = yaml.safe_load(raw_value)
        node = tree
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise SchemaError(dotted, "override path crosses a non-mapping node")
        node[parts[-1]] = value
    return tree


def load_config(path, overrides=None) -> RunConfig:
    """Parse, validate, and materialize a YAML run configuration."""
    with open(path, "r") as fh:
        tree = yaml.safe_load(fh)
    if not isinstance(tree, dict):
        raise SchemaError("<root>", "config must be a mapping")
    tree = _apply_overrides(tree, overrides)
    return build_config(tree)


def build_config(tree: dict) -> RunConfig:
    for section in tree:
        if section not in _SCHEMA:
            raise SchemaError(section, "unknown section")
    for section in _SCHEMA:
        if section not in tree and section not in _OPTIONAL_SECTIONS:
            raise SchemaError(section, "missing required section")

    mk = _check_section("market", tree["market"], _SCHEMA["market"])
    try:
        market = MarketParams(**mk)
    except PreconditionError as exc:
        raise SchemaError("market", str(exc)) from None

    ut = _check_section("utility", tree["utility"], _SCHEMA["utility"])
    for sub in ("u", "u_T"):
        if sub in ut:
            _check_section(f"utility.{sub}", ut[sub], _UTILITY_FIELDS)
    try:
        u = make_utility(ut["u"])
        u_T = make_utility(ut["u_T"]) if "u_T" in ut else make_utility({"kind": "zero"})
        kernel = UtilityKernel(
            u=u,
            u_T=u_T,
            b=market.b,
            gamma=ut.get("growth_gamma", 0.5),
            theta=ut.get("growth_theta", 2.0),
            K=ut.get("growth_K", 1.0),
        )
    except (PreconditionError, KeyError) as exc:
        raise SchemaError("utility", str(exc)) from None

    gr = _check_section("grid", tree["grid"], _SCHEMA["grid"])
    try:
        grid = Grid1D(
            z_min=gr["z_min"], z_max=gr["z_max"], nz=gr["nz"],
            n_tau=gr["n_tau"], tau_max=market.T,
        )
    except PreconditionError as exc:
        raise SchemaError("grid", str(exc)) from None
    if not 0 < gr["h_min"] < gr["h_max"]:
        raise SchemaError("grid.h_min", "need 0 < h_min < h_max")
    if gr["h_count"] < 2:
        raise SchemaError("grid.h_count", "need at least 2 habit slices")
    spacing = gr.get("h_spacing", "geometric")
    if spacing == "geometric":
        h_grid = np.geomspace(gr["h_min"], gr["h_max"], gr["h_count"])
    elif spacing == "linear":
        h_grid = np.linspace(gr["h_min"], gr["h_max"], gr["h_count"])
    else:
        raise SchemaError("grid.h_spacing", f"expected 'geometric' or 'linear', got {spacing!r}")
    mult = gr.get("h_bar_multiplier", 1.0)
    if mult < 1.0:
        raise SchemaError("grid.h_bar_multiplier", "must be >= 1")
    h_bar = gr["h_max"] * mult

    pen_tree = tree.get("penalty", {})
    pn = _check_section("penalty", pen_tree, _SCHEMA["penalty"])
    try:
        penalty = PenaltyParams(**pn)
    except PreconditionError as exc:
        raise SchemaError("penalty", str(exc)) from None

    sim = None
    if "sim" in tree:
        sm = _check_section("sim", tree["sim"], _SCHEMA["sim"])
        try:
            sim = SimConfig(**sm)
            sim.validate(market)
        except PreconditionError as exc:
            raise SchemaError("sim", str(exc)) from None

    out = _check_section("outputs", tree.get("outputs", {"directory": "out"}), _SCHEMA["outputs"])
    probes = out.get("value_probes", [])
    for i, probe in enumerate(probes):
        if not (isinstance(probe, (list, tuple)) and len(probe) == 3):
            raise SchemaError(f"outputs.value_probes[{i}]", "expected [x, t, h]")

    return RunConfig(
        market=market,
        kernel=kernel,
        grid=grid,
        h_grid=h_grid,
        h_bar=h_bar,
        penalty=penalty,
        sim=sim,
        out_dir=out["directory"],
        value_probes=[tuple(float(v) for v in p) for p in probes],
        raw=tree,
    )
